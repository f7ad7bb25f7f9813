"""Reproducible experiment drivers.

Three studies, each emitting tidy CSV plus a JSON run manifest:

* quality shift    -- predictive performance and calibration versus additive
  feature-noise intensity, per weight-sampling method;
* data growth      -- epistemic/aleatoric uncertainty on a held-out test set
  as nested training subsets grow;
* selector compare -- learning curves of the curation loop for the ehal,
  elah and random selectors under shared seeds.

Result CSVs carry no timestamps, so a rerun with the same spec produces
byte-identical files; the timestamp lives only in the manifest.  File names
embed a hash of the resolved spec.  Set ``UQCURATE_JOBS`` to run repetitions
in parallel worker processes (results are assembled in index order either
way, so the output does not depend on the degree of parallelism).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__ as _version
from .curation import CurationResult, LoopConfig, curation_loop
from .data import (
    Dataset,
    SplitSpec,
    SyntheticSpec,
    generate_synthetic,
    inject_shift,
    load_csv,
    split,
    undersample_balance,
)
from .errors import ConfigError
from .metrics import classification_report
from .models import (
    HETEROSCEDASTIC,
    Ensemble,
    ModelConfig,
    MlpModel,
    hetero_raw_outputs,
    predict_ensemble,
    predict_mc_dropout,
    predict_vanilla,
    save_ensemble,
    save_model,
    train_ensemble,
    train_model,
)
from .nncore import make_rng, spawn_seeds
from .uq import mean_predictive, summarize_hetero

UQ_METHODS = ("vanilla", "mc-dropout", "ensemble")

SHIFT = "shift"
GROWTH = "data-growth"
COMPARE = "selector-compare"
TRAIN = "train"
KINDS = (SHIFT, GROWTH, COMPARE, TRAIN)


@dataclass
class ExperimentSpec:
    kind: str
    data_csv: str | None = None
    synthetic: SyntheticSpec | None = None
    head: str = "hetero"
    uq_methods: tuple[str, ...] = ("ensemble",)
    ensemble_size: int = 5
    mc_passes: int = 30
    hidden_layers: int = 3
    hidden_width: int = 300
    dropout: float = 0.1
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 5
    batch_size: int = 64
    logit_samples: int = 50
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    intensities: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4)
    shift_train: bool = True
    shift_test: bool = True
    growth_fractions: tuple[float, ...] = (0.6, 0.8, 1.0)
    selectors: tuple[str, ...] = ("ehal", "elah", "random")
    tranche_fraction: float = 0.1
    n_ale_fraction: float = 0.1
    seed_fraction: float = 0.2
    pool_fraction: float = 0.6
    decompose_draws: int = 200
    uncertainty_source: str = "entropy"
    repetitions: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"experiment kind must be one of {KINDS}, got {self.kind!r}")
        if (self.data_csv is None) == (self.synthetic is None):
            raise ConfigError("exactly one of data_csv / synthetic must be set")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if any(i < 0 for i in self.intensities):
            raise ConfigError("shift intensities must be >= 0")
        unknown = set(self.uq_methods) - set(UQ_METHODS)
        if unknown:
            raise ConfigError(f"unknown uq methods {sorted(unknown)}; valid: {UQ_METHODS}")
        if not self.growth_fractions or sorted(self.growth_fractions) != list(self.growth_fractions):
            raise ConfigError("growth_fractions must be ascending")
        if any(not 0.0 < f <= 1.0 for f in self.growth_fractions):
            raise ConfigError("growth_fractions must lie in (0, 1]")

    def model_config(self, input_dim: int) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim,
            hidden_layers=self.hidden_layers,
            hidden_width=self.hidden_width,
            dropout=self.dropout,
            head=self.head,
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            logit_samples=self.logit_samples,
        )

    def loop_config(self, input_dim: int) -> LoopConfig:
        return LoopConfig(
            model=self.model_config(input_dim),
            uq_method="ensemble" if "ensemble" in self.uq_methods else "mc-dropout",
            ensemble_size=self.ensemble_size,
            mc_passes=self.mc_passes,
            seed_fraction=self.seed_fraction,
            pool_fraction=self.pool_fraction,
            val_fraction=self.val_fraction,
            tranche_fraction=self.tranche_fraction,
            n_ale_fraction=self.n_ale_fraction,
            decompose_draws=self.decompose_draws,
            uncertainty_source=self.uncertainty_source,
        )

    def resolved(self) -> dict:
        out = dataclasses.asdict(self)
        if self.synthetic is not None:
            out["synthetic"] = dataclasses.asdict(self.synthetic)
        return out

    def digest(self) -> str:
        payload = json.dumps(self.resolved(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:10]


def _jobs() -> int:
    raw = os.environ.get("UQCURATE_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"UQCURATE_JOBS must be an integer, got {raw!r}") from None


def _map_reps(fn, args_list):
    """Run per-repetition work, optionally in processes; order preserved."""
    jobs = _jobs()
    if jobs == 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args_list))


def _base_dataset(spec: ExperimentSpec, data_seed: int) -> Dataset:
    if spec.data_csv is not None:
        return load_csv(spec.data_csv)
    return generate_synthetic(spec.synthetic, make_rng(data_seed))


def _fit_method(method: str, spec: ExperimentSpec, cfg: ModelConfig,
                fit_ds: Dataset, val_ds: Dataset, seed: int):
    if method == "ensemble":
        return train_ensemble(
            cfg, spec.ensemble_size, fit_ds.X, fit_ds.y, val_ds.X, val_ds.y, seed=seed
        )
    model = MlpModel(cfg, seed=seed)
    return train_model(model, fit_ds.X, fit_ds.y, val_ds.X, val_ds.y)


def _method_mean_probs(method: str, fitted, X, spec: ExperimentSpec, rng):
    if method == "ensemble":
        return mean_predictive(predict_ensemble(fitted, X, rng=rng))
    if method == "mc-dropout":
        return mean_predictive(predict_mc_dropout(fitted, X, spec.mc_passes, rng=rng))
    return predict_vanilla(fitted, X, rng=rng)


# ---------------------------------------------------------------------------
# quality-shift study
# ---------------------------------------------------------------------------


def _shift_one_rep(args):
    spec, rep = args
    data_seed, split_seed, balance_seed, shift_seed, fit_seed, eval_seed = spawn_seeds(
        spec.seed, 6 * spec.repetitions
    )[6 * rep : 6 * rep + 6]
    base = _base_dataset(spec, data_seed)
    train_ds, val_ds, test_ds = split(base, SplitSpec(
        spec.train_fraction, spec.val_fraction, seed=split_seed))
    cfg = spec.model_config(base.feature_dim)

    cells = []
    intensity_seeds = spawn_seeds(shift_seed, len(spec.intensities))
    for intensity, iseed in zip(spec.intensities, intensity_seeds):
        irng = make_rng(iseed)
        tr = inject_shift(train_ds, intensity, irng) if spec.shift_train else train_ds
        va = inject_shift(val_ds, intensity, irng) if spec.shift_train else val_ds
        te = inject_shift(test_ds, intensity, irng) if spec.shift_test else test_ds
        fit = undersample_balance(tr, make_rng(balance_seed))
        for method in spec.uq_methods:
            fitted = _fit_method(method, spec, cfg, fit, va, fit_seed)
            probs = _method_mean_probs(method, fitted, te.X, spec, make_rng(eval_seed))
            report = classification_report(probs, te.y)
            cells.append({
                "method": method,
                "intensity": intensity,
                "rep": rep,
                "f1": report.f1,
                "brier": report.brier,
            })
    return cells


@dataclass
class ExperimentResult:
    kind: str
    spec: ExperimentSpec
    rows: list[dict]                      # aggregated rows
    run_rows: list[dict] = field(default_factory=list)   # per-repetition rows
    outputs: dict = field(default_factory=dict)


def run_shift_experiment(spec: ExperimentSpec, out_dir=None) -> ExperimentResult:
    """Mean +- std F1 and Brier per (method, intensity) over repetitions."""
    if spec.kind != SHIFT:
        raise ConfigError(f"spec kind is {spec.kind!r}, expected {SHIFT!r}")
    per_rep = _map_reps(_shift_one_rep, [(spec, r) for r in range(spec.repetitions)])
    run_rows = [cell for cells in per_rep for cell in cells]

    rows = []
    for method in spec.uq_methods:
        for intensity in spec.intensities:
            f1s = [c["f1"] for c in run_rows if c["method"] == method and c["intensity"] == intensity]
            briers = [c["brier"] for c in run_rows if c["method"] == method and c["intensity"] == intensity]
            rows.append({
                "method": method,
                "intensity": intensity,
                "mean_f1": float(np.mean(f1s)),
                "std_f1": float(np.std(f1s)),
                "mean_brier": float(np.mean(briers)),
                "std_brier": float(np.std(briers)),
                "n_reps": len(f1s),
            })
    result = ExperimentResult(SHIFT, spec, rows, run_rows)
    if out_dir is not None:
        _write_outputs(result, out_dir, summary_name="shift",
                       run_fields=["method", "intensity", "rep", "f1", "brier"])
    return result


# ---------------------------------------------------------------------------
# data-growth study
# ---------------------------------------------------------------------------


def nested_fractions(n: int, fractions, rng) -> list[np.ndarray]:
    """Nested index subsets: one permutation, ascending prefixes."""
    perm = rng.permutation(n)
    return [perm[: max(2, int(round(f * n)))] for f in fractions]


def _growth_one_rep(args):
    spec, rep = args
    data_seed, split_seed, subset_seed, balance_seed, fit_seed, eval_seed = spawn_seeds(
        spec.seed, 6 * spec.repetitions
    )[6 * rep : 6 * rep + 6]
    base = _base_dataset(spec, data_seed)
    train_ds, val_ds, test_ds = split(base, SplitSpec(
        spec.train_fraction, spec.val_fraction, seed=split_seed))
    cfg = spec.model_config(base.feature_dim)

    subsets = nested_fractions(len(train_ds), spec.growth_fractions, make_rng(subset_seed))
    cells = []
    for fraction, idx in zip(spec.growth_fractions, subsets):
        fit = undersample_balance(train_ds.subset(idx), make_rng(balance_seed))
        ensemble = train_ensemble(
            cfg, spec.ensemble_size, fit.X, fit.y, val_ds.X, val_ds.y, seed=fit_seed
        )
        rng = make_rng(eval_seed)
        mu, sigma = hetero_raw_outputs(ensemble, test_ds.X, rng=rng)
        member_probs = predict_ensemble(ensemble, test_ds.X, rng=rng)
        summaries = summarize_hetero(mu, sigma, member_probs,
                                     n_draws=spec.decompose_draws, rng=rng)
        cells.append({
            "fraction": fraction,
            "rep": rep,
            "mean_epi": float(np.mean([s.entropy_epistemic for s in summaries])),
            "mean_ale": float(np.mean([s.entropy_aleatoric for s in summaries])),
        })
    return cells


def run_data_growth_experiment(spec: ExperimentSpec, out_dir=None) -> ExperimentResult:
    """Test-set mean uncertainties as nested training subsets grow, with
    relative deltas against the previous fraction."""
    if spec.kind != GROWTH:
        raise ConfigError(f"spec kind is {spec.kind!r}, expected {GROWTH!r}")
    if spec.head not in ("hetero", HETEROSCEDASTIC):
        raise ConfigError("data-growth study requires the heteroscedastic head")
    per_rep = _map_reps(_growth_one_rep, [(spec, r) for r in range(spec.repetitions)])
    run_rows = [cell for cells in per_rep for cell in cells]

    rows = []
    prev_epi = prev_ale = None
    for fraction in spec.growth_fractions:
        epis = [c["mean_epi"] for c in run_rows if c["fraction"] == fraction]
        ales = [c["mean_ale"] for c in run_rows if c["fraction"] == fraction]
        mean_epi, mean_ale = float(np.mean(epis)), float(np.mean(ales))
        rows.append({
            "fraction": fraction,
            "mean_epi": mean_epi,
            "delta_epi_pct": 0.0 if prev_epi is None else 100.0 * (prev_epi - mean_epi) / prev_epi,
            "std_epi": float(np.std(epis)),
            "mean_ale": mean_ale,
            "delta_ale_pct": 0.0 if prev_ale is None else 100.0 * (prev_ale - mean_ale) / prev_ale,
            "std_ale": float(np.std(ales)),
            "n_reps": len(epis),
        })
        prev_epi, prev_ale = mean_epi, mean_ale
    result = ExperimentResult(GROWTH, spec, rows, run_rows)
    if out_dir is not None:
        _write_outputs(result, out_dir, summary_name="growth",
                       run_fields=["fraction", "rep", "mean_epi", "mean_ale"])
    return result


# ---------------------------------------------------------------------------
# selector comparison
# ---------------------------------------------------------------------------


def _compare_one_rep(args):
    spec, rep = args
    data_seed, loop_seed = spawn_seeds(spec.seed, 2 * spec.repetitions)[2 * rep : 2 * rep + 2]
    base = _base_dataset(spec, data_seed)
    cfg = spec.loop_config(base.feature_dim)
    out = {}
    for selector in spec.selectors:
        out[selector] = curation_loop(base, selector, cfg, seed=loop_seed)
    return rep, out


def _noisy_fraction(result: CurationResult, upto: int | None = None) -> float:
    tags = result.selected_noise_tags
    if upto is not None:
        tags = tags[:upto]
    if not tags:
        return float("nan")
    return float(np.mean(tags))


def run_selector_comparison(spec: ExperimentSpec, out_dir=None) -> ExperimentResult:
    """Curation-loop learning curves per selector under shared seeds."""
    if spec.kind != COMPARE:
        raise ConfigError(f"spec kind is {spec.kind!r}, expected {COMPARE!r}")
    per_rep = _map_reps(_compare_one_rep, [(spec, r) for r in range(spec.repetitions)])

    run_rows = []
    for rep, results in per_rep:
        for selector, res in results.items():
            for row in res.rows:
                run_rows.append({
                    "selector": selector,
                    "rep": rep,
                    "round": row.round,
                    "fraction_added": row.fraction_added,
                    "f1": row.f1,
                    "mean_epi": row.mean_epi,
                    "mean_ale": row.mean_ale,
                    "selected_noisy_fraction": _noisy_fraction(res, upto=row.n_selected),
                })

    rows = []
    rounds = sorted({r["round"] for r in run_rows})
    for selector in spec.selectors:
        for rnd in rounds:
            sub = [r for r in run_rows if r["selector"] == selector and r["round"] == rnd]
            if not sub:
                continue
            rows.append({
                "selector": selector,
                "round": rnd,
                "fraction_added": float(np.mean([r["fraction_added"] for r in sub])),
                "mean_f1": float(np.mean([r["f1"] for r in sub])),
                "std_f1": float(np.std([r["f1"] for r in sub])),
                "var_f1": float(np.var([r["f1"] for r in sub])),
                "mean_selected_noisy_fraction": float(np.mean(
                    [r["selected_noisy_fraction"] for r in sub])),
                "n_reps": len(sub),
            })
    result = ExperimentResult(COMPARE, spec, rows, run_rows)
    if out_dir is not None:
        _write_outputs(result, out_dir, summary_name="compare",
                       run_fields=["selector", "rep", "round", "fraction_added", "f1",
                                   "mean_epi", "mean_ale", "selected_noisy_fraction"])
        _write_wide_f1(result, out_dir)
    return result


def _write_wide_f1(result: ExperimentResult, out_dir) -> None:
    """Per-rep F1 with one column per selector, for rank-test reporting."""
    spec = result.spec
    path = os.path.join(out_dir, f"compare_f1_by_selector_{spec.digest()}.csv")
    keyed = {}
    for r in result.run_rows:
        keyed.setdefault((r["round"], r["fraction_added"], r["rep"]), {})[r["selector"]] = r["f1"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "fraction_added", "rep", *spec.selectors])
        for (rnd, frac, rep), cols in sorted(keyed.items()):
            writer.writerow([rnd, repr(frac), rep] + [repr(cols[s]) for s in spec.selectors])
    result.outputs["wide_f1_csv"] = path


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------


def _format_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows_csv(rows: list[dict], fields: list[str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_format_cell(row[f]) for f in fields])


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_outputs(result: ExperimentResult, out_dir, summary_name: str,
                   run_fields: list[str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    spec = result.spec
    tag = spec.digest()
    summary_path = os.path.join(out_dir, f"{summary_name}_summary_{tag}.csv")
    runs_path = os.path.join(out_dir, f"{summary_name}_runs_{tag}.csv")
    write_rows_csv(result.rows, list(result.rows[0].keys()), summary_path)
    write_rows_csv(result.run_rows, run_fields, runs_path)
    result.outputs["summary_csv"] = summary_path
    result.outputs["runs_csv"] = runs_path
    manifest = {
        "kind": result.kind,
        "spec": spec.resolved(),
        "spec_digest": spec.digest(),
        "tool_version": _version,
        "timestamp_unix": time.time(),
        "input_digests": (
            {spec.data_csv: _sha256(spec.data_csv)} if spec.data_csv else {}
        ),
        "outputs": dict(result.outputs),
        "jobs": _jobs(),
    }
    manifest_path = os.path.join(out_dir, f"{summary_name}_manifest_{tag}.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    result.outputs["manifest_json"] = manifest_path


# ---------------------------------------------------------------------------
# config mapping (key=value files and CLI overrides)
# ---------------------------------------------------------------------------

_SYNTHETIC_KEYS = set(SyntheticSpec.VALID_KEYS)

_SPEC_COERCERS = {
    "head": str,
    "uq": "strlist",
    "ensemble_size": int,
    "mc_passes": int,
    "hidden_layers": int,
    "hidden_width": int,
    "dropout": float,
    "learning_rate": float,
    "max_epochs": int,
    "patience": int,
    "batch_size": int,
    "logit_samples": int,
    "train_fraction": float,
    "val_fraction": float,
    "intensities": "floatlist",
    "shift_train": "bool",
    "shift_test": "bool",
    "growth_fractions": "floatlist",
    "selectors": "strlist",
    "tranche_fraction": float,
    "n_ale_fraction": float,
    "seed_fraction": float,
    "pool_fraction": float,
    "decompose_draws": int,
    "uncertainty_source": str,
    "repetitions": int,
    "seed": int,
}

VALID_CONFIG_KEYS = sorted({"data", *_SYNTHETIC_KEYS, *_SPEC_COERCERS})

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str):
    kind = _SPEC_COERCERS[key]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "floatlist":
            return tuple(float(v) for v in raw.split(",") if v.strip() != "")
        if kind == "strlist":
            return tuple(v.strip() for v in raw.split(",") if v.strip() != "")
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key}={raw!r} has the wrong type") from None


def spec_from_mapping(kind: str, mapping: dict[str, str]) -> ExperimentSpec:
    """Build an ExperimentSpec from string key=value pairs.

    Unknown keys are rejected with the full list of valid keys.  ``data``
    is either the literal ``synthetic`` (the synthetic generator keys then
    apply) or a path to a feature CSV.
    """
    unknown = set(mapping) - set(VALID_CONFIG_KEYS)
    if unknown:
        raise ConfigError(
            f"unknown config keys {sorted(unknown)}; valid keys: {VALID_CONFIG_KEYS}"
        )
    data = mapping.get("data", "synthetic")
    kwargs: dict = {"kind": kind}
    if data == "synthetic":
        kwargs["synthetic"] = SyntheticSpec.from_mapping(
            {k: v for k, v in mapping.items() if k in _SYNTHETIC_KEYS}
        )
    else:
        extra = _SYNTHETIC_KEYS & set(mapping)
        if extra:
            raise ConfigError(
                f"synthetic keys {sorted(extra)} set but data is a CSV path"
            )
        kwargs["data_csv"] = data
    for key, raw in mapping.items():
        if key == "data" or key in _SYNTHETIC_KEYS:
            continue
        value = _coerce(key, raw)
        kwargs["uq_methods" if key == "uq" else key] = value
    return ExperimentSpec(**kwargs)


def load_profile(name: str) -> dict[str, str]:
    """Key=value mapping for a profile shipped inside the package."""
    from importlib import resources

    from .data import parse_kv_file

    ref = resources.files("uqcurate") / "profiles" / f"{name}.cfg"
    if not ref.is_file():
        available = sorted(
            p.name[: -len(".cfg")]
            for p in (resources.files("uqcurate") / "profiles").iterdir()
            if p.name.endswith(".cfg")
        )
        raise ConfigError(f"unknown profile {name!r}; available: {available}")
    with resources.as_file(ref) as path:
        return parse_kv_file(path)


# ---------------------------------------------------------------------------
# single training run (checkpoint + evaluation report)
# ---------------------------------------------------------------------------


def run_training(spec: ExperimentSpec, out_dir=None, checkpoint_name: str = "model"):
    """Standard protocol on one dataset: split, balance, fit the configured
    method, evaluate on the test partition.  Returns (fitted, report, paths);
    with ``out_dir`` set, writes the checkpoint and an EvalReport JSON."""
    if spec.kind != TRAIN:
        raise ConfigError(f"spec kind is {spec.kind!r}, expected {TRAIN!r}")
    method = spec.uq_methods[0]
    data_seed, split_seed, balance_seed, fit_seed, eval_seed = spawn_seeds(spec.seed, 5)
    base = _base_dataset(spec, data_seed)
    train_ds, val_ds, test_ds = split(base, SplitSpec(
        spec.train_fraction, spec.val_fraction, seed=split_seed))
    fit = undersample_balance(train_ds, make_rng(balance_seed))
    cfg = spec.model_config(base.feature_dim)
    fitted = _fit_method(method, spec, cfg, fit, val_ds, fit_seed)
    probs = _method_mean_probs(method, fitted, test_ds.X, spec, make_rng(eval_seed))
    report = classification_report(probs, test_ds.y)
    outputs: dict = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        tag = spec.digest()
        ckpt = os.path.join(out_dir, f"{checkpoint_name}_{tag}.npz")
        if isinstance(fitted, Ensemble):
            save_ensemble(fitted, ckpt)
        else:
            save_model(fitted, ckpt)
        report_path = os.path.join(out_dir, f"{checkpoint_name}_report_{tag}.json")
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump({"spec": spec.resolved(), "method": method,
                       "report": report.to_dict()}, fh, indent=2, sort_keys=True)
        outputs = {"checkpoint": ckpt, "report_json": report_path}
    return fitted, report, outputs
