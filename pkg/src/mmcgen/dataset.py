"""Batch generation of labeled, rasterized optimized designs.

For every loading-position label a number of randomized runs is executed
(mixing the three layout strategies), screened by quality filters, and
written out as a manifest-indexed image corpus:

    out/
      images/<id>.png   8-bit grayscale, square, upscaled dataset format
      raw/<id>.pgm      8-bit grayscale raster at analysis resolution
      manifest.jsonl    one sample record per line
      spec.json         problem + plan snapshot and its hash

Everything is deterministic for a fixed master seed: each (label,
attempt) pair owns an independent random stream, so the worker count
never changes the output.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .fea import analyze_design, reanalyze_image
from .geometry import GroundStructure
from .metrics import genus, m_nd
from .optimizer import OptimizationConfig, run_optimization
from .problems import ProblemSpec, attach_ground, problem_from_config
from .strategies import BaseCellSpec, strategy1, strategy2, strategy3

TARGET_SIZE = 200


class DatasetError(RuntimeError):
    """Pipeline-level failure (bad plan, no viable samples, layout mismatch)."""


@dataclass(frozen=True)
class GenerationPlan:
    """Per-label sample counts, strategy mix and randomization ranges."""

    per_label: int
    opt_iters: int = 70
    strategy_mix: tuple[float, float, float] = (0.25, 0.35, 0.4)
    cells_x_range: tuple[int, int] = (2, 3)
    cells_y_range: tuple[int, int] = (2, 2)
    pre_iters_max: int = 40
    n_extra_range: tuple[int, int] = (2, 8)
    max_attempt_factor: int = 6
    volume_tol: float = 1e-2
    # Reject samples whose rasterized compliance strays further than this
    # from the converged design's: such rasters lost load-path integrity
    # (pixel hinges, cut necks) when binarized.
    integrity_tol: float = 0.10
    target_size: int = TARGET_SIZE
    resize_mode: str = "stretch"

    def __post_init__(self):
        if self.per_label < 1:
            raise DatasetError("per-label sample count must be >= 1")
        if abs(sum(self.strategy_mix) - 1.0) > 1e-9:
            raise DatasetError("strategy mix must sum to 1")
        if self.resize_mode not in ("stretch", "pad"):
            raise DatasetError(f"unknown resize mode {self.resize_mode!r}")

    @property
    def max_attempts(self) -> int:
        return self.per_label * self.max_attempt_factor + 2


@dataclass
class DatasetManifest:
    """In-memory view of a generated corpus."""

    problem: dict
    plan: dict
    master_seed: int
    config_hash: str
    samples: list[dict] = field(default_factory=list)

    def per_label_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for s in self.samples:
            counts[s["load_pos"]] = counts.get(s["load_pos"], 0) + 1
        return counts

    def to_json(self) -> str:
        doc = {
            "spec": {
                "problem": self.problem,
                "plan": self.plan,
                "master_seed": self.master_seed,
                "config_hash": self.config_hash,
            },
            "samples": self.samples,
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        doc = json.loads(text)
        spec = doc["spec"]
        return cls(problem=spec["problem"], plan=spec["plan"],
                   master_seed=spec["master_seed"],
                   config_hash=spec["config_hash"], samples=doc["samples"])


def resize_to_square(raster: np.ndarray, target: int = TARGET_SIZE,
                     mode: str = "stretch") -> np.ndarray:
    """Upscale an analysis-resolution raster to the square dataset format.

    stretch: nearest-neighbor integer upscaling per axis (requires target
    to be a multiple of both source dimensions; exactly invertible by
    block averaging).  pad: void rows/columns are appended on the far
    side first to make the raster square, then upscaled.
    """
    r = np.asarray(raster)
    h, w = r.shape
    if mode == "pad":
        side = max(h, w)
        r = np.pad(r, ((0, side - h), (0, side - w)))
        h = w = side
    elif mode != "stretch":
        raise DatasetError(f"unknown resize mode {mode!r}")
    if h < 1 or w < 1 or target % h or target % w:
        raise DatasetError(
            f"unsupported dims: cannot resize {h}x{w} raster to {target}x{target}")
    return np.repeat(np.repeat(r, target // h, axis=0), target // w, axis=1)


def inverse_resize(image: np.ndarray, source_shape: tuple[int, int],
                   mode: str = "stretch") -> np.ndarray:
    """Map a dataset-format image back onto the analysis raster (block average)."""
    img = np.asarray(image, dtype=float)
    sh, sw = source_shape
    h, w = img.shape
    if mode == "pad":
        side = max(sh, sw)
        if h % side or w % side:
            raise DatasetError(f"image {h}x{w} is not a multiple of {side}x{side}")
        fy, fx = h // side, w // side
        down = img.reshape(side, fy, side, fx).mean(axis=(1, 3))
        return down[:sh, :sw]
    if h % sh or w % sw:
        raise DatasetError(f"image {h}x{w} is not a multiple of {sh}x{sw}")
    fy, fx = h // sh, w // sw
    return img.reshape(sh, fy, sw, fx).mean(axis=(1, 3))


def save_png(path: Path, raster8: np.ndarray):
    """Write an internal raster (row 0 at the bottom) as a grayscale PNG."""
    Image.fromarray(np.flipud(np.asarray(raster8, dtype=np.uint8)), "L").save(path)


def load_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return np.flipud(arr).copy()


def save_pgm(path: Path, raster8: np.ndarray):
    arr = np.flipud(np.asarray(raster8, dtype=np.uint8))
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + arr.tobytes())


def load_pgm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise DatasetError(f"{path}: not a binary PGM file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise DatasetError(f"{path}: only 8-bit PGM supported")
    arr = np.frombuffer(data[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    return np.flipud(arr.reshape(h, w)).copy()


def quantize(density: np.ndarray) -> np.ndarray:
    """8-bit grayscale quantization of a [0, 1] density raster."""
    return np.rint(np.clip(density, 0.0, 1.0) * 255.0).astype(np.uint8)


def _build_ground(problem: ProblemSpec, plan: GenerationPlan, label: int,
                  config: OptimizationConfig, rng) -> tuple[GroundStructure, int]:
    strategy = int(rng.choice((1, 2, 3), p=plan.strategy_mix))
    cells_x = int(rng.integers(plan.cells_x_range[0], plan.cells_x_range[1] + 1))
    cells_y = int(rng.integers(plan.cells_y_range[0], plan.cells_y_range[1] + 1))
    spec = BaseCellSpec(cells_x, cells_y)
    g = problem.grid
    if strategy == 3:
        n_extra = int(rng.integers(plan.n_extra_range[0], plan.n_extra_range[1] + 1))
        sub_seed = int(rng.integers(2 ** 63))
        ground = strategy3(spec, g.lx, g.ly, n_extra, seed=sub_seed,
                           void_rect=problem.nondesign_rect)
        ground = attach_ground(ground, problem, label)
    else:
        ground = strategy1(spec, g.lx, g.ly, void_rect=problem.nondesign_rect)
        ground = attach_ground(ground, problem, label)
        if strategy == 2:
            pre_iters = int(rng.integers(1, plan.pre_iters_max + 1))
            sub_seed = int(rng.integers(2 ** 63))
            model = problem.fea_model(label)
            ground = strategy2(ground, model, config, pre_iters=pre_iters,
                               seed=sub_seed)
    return ground, strategy


def generate_one(problem_config: dict, plan: GenerationPlan, label: int,
                 attempt: int, master_seed: int) -> dict:
    """One randomized optimization attempt for one label (worker entry point)."""
    problem = problem_from_config(problem_config)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(label, attempt)))
    config = OptimizationConfig(vbar=problem.vbar, max_iters=plan.opt_iters,
                                seed=attempt, heaviside=problem.heaviside)
    model = problem.fea_model(label)
    try:
        ground, strategy = _build_ground(problem, plan, label, config, rng)
        history = run_optimization(ground, model, config)
    except Exception as exc:  # aborted runs are data, not crashes
        return {"ok": False, "label": label, "attempt": attempt,
                "reason": f"optimization failed: {exc}"}
    if history.error:
        return {"ok": False, "label": label, "attempt": attempt,
                "reason": f"optimization aborted: {history.error}"}

    if history.final_heaviside is not None:
        model = replace(model, heaviside=history.final_heaviside)
    _, result = analyze_design(history.final_design, model, config.tdf)
    compliance = result.compliance
    vfrac = result.volume_fraction
    if vfrac > problem.vbar + plan.volume_tol:
        return {"ok": False, "label": label, "attempt": attempt,
                "reason": f"volume violation: {vfrac:.4f} > {problem.vbar}"}

    raw8 = quantize(result.densities)
    binary = raw8 >= 128
    topo = genus(binary, problem.binning)
    if topo.betti0 != 1:
        return {"ok": False, "label": label, "attempt": attempt,
                "reason": f"disconnected raster: {topo.betti0} regions"}

    ix, iy = problem.load_node_index(label)
    g = problem.grid
    touching = [binary[ey, ex] for ey in (iy - 1, iy) for ex in (ix - 1, ix)
                if 0 <= ey < g.ny and 0 <= ex < g.nx]
    if not any(touching):
        return {"ok": False, "label": label, "attempt": attempt,
                "reason": "load position not attached to material"}

    try:
        image8 = resize_to_square(raw8, plan.target_size, plan.resize_mode)
    except DatasetError as exc:
        raise DatasetError(f"grid incompatible with dataset format: {exc}") from exc
    raster_back = inverse_resize(image8 / 255.0, (g.ny, g.nx), plan.resize_mode)
    re_result, infeasible = reanalyze_image(raster_back, model, threshold=0.5)
    rel_gap = abs(re_result.compliance - compliance) / abs(compliance)
    if infeasible or rel_gap > plan.integrity_tol:
        return {"ok": False, "label": label, "attempt": attempt,
                "reason": f"raster integrity: {rel_gap:.4f} design-vs-image gap"}

    # The record describes the shipped image: its compliance is the image's
    # own reanalysis value (the design's converged volume is kept, since the
    # image has no volume of its own beyond pixel count).
    sample = {
        "id": f"{problem.problem_id}-p{label:03d}-a{attempt:03d}",
        "load_pos": label,
        "genus": topo.genus,
        "complexity_level": topo.complexity_level,
        "compliance": re_result.compliance,
        "volume_fraction": vfrac,
        "m_nd": m_nd(image8 / 255.0),
        "strategy": strategy,
        "seed": attempt,
        "source_shape": [g.ny, g.nx],
    }
    return {"ok": True, "label": label, "attempt": attempt,
            "sample": sample, "raw": raw8, "image": image8}


def _worker(args):
    return generate_one(*args)


def _run_tasks(tasks: list[tuple], jobs: int) -> list[dict]:
    if jobs <= 1 or len(tasks) <= 1:
        return [_worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_worker, tasks, chunksize=1))


def _spec_doc(problem: ProblemSpec, plan: GenerationPlan, master_seed: int) -> tuple[dict, str]:
    doc = {"problem": problem.to_config(), "plan": asdict(plan),
           "master_seed": master_seed}
    blob = json.dumps(doc, sort_keys=True).encode()
    return doc, hashlib.sha256(blob).hexdigest()


def generate_samples(problem: ProblemSpec, plan: GenerationPlan, master_seed: int,
                     out_dir: str | Path, jobs: int = 1, resume: bool = False,
                     log=lambda msg: None) -> DatasetManifest:
    """Generate the full corpus under out_dir and return its manifest.

    Labels whose attempts all fail raise; labels that end short of the
    target count are kept with a warning.  With resume=True, labels that
    are already complete in an existing manifest are not regenerated.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "raw").mkdir(parents=True, exist_ok=True)
    spec_doc, config_hash = _spec_doc(problem, plan, master_seed)

    done: dict[int, list[dict]] = {}
    manifest_path = out / "manifest.jsonl"
    spec_path = out / "spec.json"
    if resume and manifest_path.exists():
        if spec_path.exists():
            old = json.loads(spec_path.read_text())
            if old.get("config_hash") != config_hash:
                raise DatasetError(
                    "resume refused: existing dataset was generated with a "
                    "different configuration")
        kept: dict[int, list[dict]] = {}
        for line in manifest_path.read_text().splitlines():
            rec = json.loads(line)
            kept.setdefault(rec["load_pos"], []).append(rec)
        for label, recs in kept.items():
            if len(recs) >= plan.per_label:
                done[label] = sorted(recs, key=lambda r: r["seed"])[:plan.per_label]
        log(f"resume: {len(done)} of {problem.n_labels} labels already complete")

    problem_config = problem.to_config()
    pending = [lab for lab in range(problem.n_labels) if lab not in done]
    successes: dict[int, list[dict]] = {lab: [] for lab in pending}
    next_attempt = {lab: 0 for lab in pending}
    failures: list[dict] = []

    while True:
        tasks = []
        for lab in pending:
            if len(successes[lab]) >= plan.per_label:
                continue
            need = plan.per_label - len(successes[lab])
            budget = plan.max_attempts - next_attempt[lab]
            for _ in range(min(need, max(budget, 0))):
                tasks.append((problem_config, plan, lab, next_attempt[lab],
                              master_seed))
                next_attempt[lab] += 1
        if not tasks:
            break
        for res in _run_tasks(tasks, jobs):
            if res["ok"]:
                successes[res["label"]].append(res)
            else:
                failures.append(res)
        for lab in pending:
            if len(successes[lab]) >= plan.per_label:
                log(f"label {lab}: {len(successes[lab])}/{plan.per_label} "
                    f"({next_attempt[lab]} attempts)")

    for lab in pending:
        got = successes[lab]
        if not got:
            reasons = [f["reason"] for f in failures if f["label"] == lab]
            raise DatasetError(
                f"label {lab}: no viable sample in {next_attempt[lab]} attempts; "
                f"failures: {reasons}")
        if len(got) < plan.per_label:
            log(f"warning: label {lab} reached only {len(got)}/{plan.per_label}")

    records: list[dict] = []
    for lab in range(problem.n_labels):
        if lab in done:
            records.extend(done[lab])
            continue
        for res in sorted(successes[lab], key=lambda r: r["attempt"])[:plan.per_label]:
            sample = res["sample"]
            save_png(out / "images" / f"{sample['id']}.png", res["image"])
            save_pgm(out / "raw" / f"{sample['id']}.pgm", res["raw"])
            records.append(sample)

    with open(manifest_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    spec_out = dict(spec_doc, config_hash=config_hash)
    spec_path.write_text(json.dumps(spec_out, sort_keys=True, indent=1) + "\n")
    if failures:
        log(f"{len(failures)} failed attempts were excluded")
    return DatasetManifest(problem=spec_doc["problem"], plan=spec_doc["plan"],
                           master_seed=master_seed, config_hash=config_hash,
                           samples=records)


def load_manifest(out_dir: str | Path) -> DatasetManifest:
    out = Path(out_dir)
    spec = json.loads((out / "spec.json").read_text())
    samples = [json.loads(line)
               for line in (out / "manifest.jsonl").read_text().splitlines()]
    missing = [s["id"] for s in samples
               if not (out / "images" / f"{s['id']}.png").exists()]
    if missing:
        raise DatasetError(f"manifest references missing images: {missing[:5]}")
    return DatasetManifest(problem=spec["problem"], plan=spec["plan"],
                           master_seed=spec["master_seed"],
                           config_hash=spec["config_hash"], samples=samples)


def summarize(manifest: DatasetManifest) -> dict:
    """Distribution report: per-label scatter data and per-level aggregates."""
    from scipy import stats

    per_label: dict[str, dict] = {}
    warnings: list[str] = []
    n_labels = int(manifest.problem.get("n_labels", 0))
    for lab in range(n_labels):
        rows = [s for s in manifest.samples if s["load_pos"] == lab]
        if not rows:
            warnings.append(f"label {lab} has no samples")
            continue
        per_label[str(lab)] = {
            "count": len(rows),
            "compliance": [r["compliance"] for r in rows],
            "genus": [r["genus"] for r in rows],
            "complexity_level": [r["complexity_level"] for r in rows],
        }

    per_level: dict[str, dict] = {}
    for s in manifest.samples:
        lvl = per_level.setdefault(str(s["complexity_level"]),
                                   {"count": 0, "compliance_sum": 0.0})
        lvl["count"] += 1
        lvl["compliance_sum"] += s["compliance"]
    for lvl in per_level.values():
        lvl["mean_compliance"] = lvl["compliance_sum"] / lvl["count"]
        del lvl["compliance_sum"]

    spearman = None
    if len(per_level) >= 2:
        levels = sorted(int(k) for k in per_level)
        means = [per_level[str(k)]["mean_compliance"] for k in levels]
        rho = stats.spearmanr(levels, means).statistic
        spearman = float(rho)
    else:
        warnings.append("fewer than two complexity levels present")

    return {
        "n_samples": len(manifest.samples),
        "per_label": per_label,
        "per_level": per_level,
        "spearman_level_vs_mean_compliance": spearman,
        "warnings": warnings,
    }
