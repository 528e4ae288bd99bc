"""Monte Carlo replication engine: one replication per (setting, n, rep_index), run in
parallel, aggregated into the validity-test and direct-effect tables."""
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .config import Command, NuisanceConfig, RunSpec, Setting, SimConfig
from .dgp import Dataset, draw_population, export_dataset, treatment_probability
from .effects import EffectNuisances, direct_effect_avg, learned_exposure_cut
from .errors import (DegeneratePartitionError, EmptyCellError, FlaggedReplicationsError,
                     InvalidArgumentError, TrainingDivergenceError)
from .exposure import (RESEARCHER_KIND_BY_SETTING, ExposureVector, quantile_partition,
                       researcher_exposure)
from .gca import GcaModel, embed_draws, learned_exposure, leave_own_out_exposure, train
from .graph import write_edge_list
from .nuisance import (FoldScheme, design_exposure_propensity, fit_exposure_propensity,
                       fit_outcome_model, fit_treatment_propensity, make_folds,
                       oracle_exposure_propensity)
from .run_progress import RunProgressTracker
from .validity_test import TestResult, dml_test, select_exposure

logger = logging.getLogger(__name__)

TRUE_DIRECT_EFFECT = 1.0
SIGNIFICANCE_LEVEL = 0.05
MAX_FLAGGED_SHARE = 0.05
SEED_MODULUS = 2 ** 32

TABLE1_SETTINGS = (Setting.S1, Setting.S2, Setting.S3)
TABLE1_SIZES = (500, 1000, 2000)
TABLE2_SIZES = (100, 200, 500, 1000)
TABLE_REPS = 200

TEST_COMMANDS = {Command.TEST_VALIDITY, Command.REPRODUCE_TABLE1, Command.ANALYZE}
EFFECT_COMMANDS = {Command.ESTIMATE_DIRECT, Command.REPRODUCE_TABLE2, Command.ANALYZE}

# keys that change from run to run and stay out of the records file
VOLATILE_KEYS = ("timings",)

# random stream for treatment redraws, apart from the replication draw
DESIGN_STREAM = 1

STEP_DRAW, STEP_RESEARCHER, STEP_GCA, STEP_TEST, STEP_EFFECT = range(5)


def derive_seed(base_seed: int, setting, n: int, rep_index: int) -> int:
    """Replication seed from sha256("base_seed|setting|n|rep_index")."""
    tag = Setting(setting).value
    digest = hashlib.sha256(f"{base_seed}|{tag}|{n}|{rep_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def default_cells(command: Command) -> Tuple[Tuple[Setting, ...], Tuple[int, ...]]:
    """Settings and sample sizes a table reproduction runs when none are given."""
    if command is Command.REPRODUCE_TABLE1:
        return TABLE1_SETTINGS, TABLE1_SIZES
    if command is Command.REPRODUCE_TABLE2:
        return (Setting.DIRECT,), TABLE2_SIZES
    return (Setting.S1,), (500,)


@dataclass
class ReplicationOutcome:
    record: Dict
    dataset: Optional[Dataset] = None
    researcher: Optional[ExposureVector] = None
    learned: Optional[ExposureVector] = None
    model: Optional[GcaModel] = None
    tracker: RunProgressTracker = field(default_factory=RunProgressTracker)


def _exposure_labels(exposure: ExposureVector, L: int) -> np.ndarray:
    if np.unique(exposure.values).size <= 2:
        return exposure.values
    return quantile_partition(exposure, L).labels.astype(np.float64)


def _direct_effect_nuisances(spec: RunSpec, dataset: Dataset, labels: np.ndarray,
                             folds: FoldScheme, exposure_prop) -> EffectNuisances:
    cfg: NuisanceConfig = spec.nuisance
    treatment = fit_treatment_propensity(dataset.D, dataset.X, folds, cfg.trim,
                                         cfg.newton_max_iter, cfg.newton_tol)
    outcome = None
    if spec.method == "dr":
        outcome = fit_outcome_model(dataset.Y, dataset.D, labels, dataset.X, folds)
    return EffectNuisances(treatment_propensity=treatment, exposure_propensity=exposure_prop,
                           outcome_model=outcome)


def estimate_direct_effect(spec: RunSpec, dataset: Dataset, learned: ExposureVector,
                           model: GcaModel, folds: FoldScheme):
    """Direct effect with the learned exposure.

    In the direct-effect design each node is embedded with its own treatment set to
    zero and binarised to the expected share of the true threshold exposure. Its
    propensity comes from redrawing treatment under the known design, keeping the
    draws with D_i = 0 and re-embedding with the fitted model and the same cut.
    Elsewhere the learned exposure is cut into quantile cells with an estimated
    propensity.
    """
    cfg = spec.nuisance
    if dataset.config.setting is Setting.DIRECT:
        share = float(oracle_exposure_propensity(dataset.graph, dataset.X).mean())
        own_out = leave_own_out_exposure(model, dataset.graph, dataset.D, dataset.X)
        cut = learned_exposure_cut(own_out, model.decoder_weight, share)
        labels = cut.apply(own_out.values)
        rng = np.random.default_rng([dataset.config.seed, DESIGN_STREAM])
        design = design_exposure_propensity(
            lambda D: cut.apply(embed_draws(model, dataset.graph, D, dataset.X)),
            treatment_probability(dataset.X), cfg.design_draws, rng, trim_bound=cfg.trim)
        exposure_prop = design[(0, 1.0)]
    else:
        labels = quantile_partition(learned, spec.L).labels.astype(np.float64)
        exposure_prop = fit_exposure_propensity(labels, dataset.graph, dataset.X, folds,
                                                cfg.trim, cfg.newton_max_iter, cfg.newton_tol)
    nuisances = _direct_effect_nuisances(spec, dataset, labels, folds, exposure_prop)
    return direct_effect_avg(dataset.Y, dataset.D, labels, dataset.X, nuisances,
                             spec.method, cfg.trim, cfg.normalize)


def estimate_with_exposure(spec: RunSpec, dataset: Dataset, exposure: ExposureVector,
                           folds: FoldScheme):
    """Direct effect averaged over the levels of any (discretised) exposure."""
    cfg = spec.nuisance
    labels = _exposure_labels(exposure, spec.L)
    exposure_prop = fit_exposure_propensity(labels, dataset.graph, dataset.X, folds,
                                            cfg.trim, cfg.newton_max_iter, cfg.newton_tol)
    nuisances = _direct_effect_nuisances(spec, dataset, labels, folds, exposure_prop)
    return direct_effect_avg(dataset.Y, dataset.D, labels, dataset.X, nuisances,
                             spec.method, cfg.trim, cfg.normalize)


def _run_test(spec: RunSpec, dataset: Dataset, researcher: ExposureVector,
              learned: ExposureVector, folds: FoldScheme) -> TestResult:
    cfg = spec.nuisance
    return dml_test(dataset.Y, researcher, learned, spec.L, folds, trim_bound=cfg.trim,
                    aggregation=cfg.aggregation, max_iter=cfg.newton_max_iter,
                    tol=cfg.newton_tol)


def _simulation_summary(dataset: Dataset) -> Dict:
    return {
        "edges": dataset.graph.edge_count,
        "mean_degree": float(dataset.graph.mean_degree),
        "mean_Y": float(dataset.Y.mean()),
        "treated_share": float(dataset.D.mean()),
        "mean_Z_true": float(dataset.Z_true.mean()),
    }


def _export_path(path: Path, setting: Setting, n: int, rep_index: int, suffix: bool) -> Path:
    if not suffix:
        return path
    return path.with_name(f"{path.stem}_{setting.value}_n{n}_r{rep_index}{path.suffix}")


def _flag(record: Dict, reason: str, error: Exception) -> Dict:
    logger.warning("replication %s n=%d rep=%d flagged (%s): %s",
                   record["setting"], record["n"], record["rep"], reason, error)
    record["flagged"] = True
    record["flag_reason"] = reason
    return record


def replicate(spec: RunSpec, setting, n: int, rep_index: int,
              tracker: Optional[RunProgressTracker] = None) -> ReplicationOutcome:
    """Run one replication and keep its intermediate objects."""
    setting = Setting(setting)
    tracker = tracker or RunProgressTracker()
    tracker.initialize_workflow()
    seed = derive_seed(spec.base_seed, setting, n, rep_index)
    record = {"command": spec.command.value, "setting": setting.value, "n": int(n),
              "rep": int(rep_index), "seed": seed, "flagged": False, "flag_reason": None}
    outcome = ReplicationOutcome(record=record, tracker=tracker)

    tracker.start_step(STEP_DRAW, {"seed": seed})
    rng = np.random.default_rng(seed)
    dataset = draw_population(SimConfig.for_setting(setting, n, seed=seed), rng)
    outcome.dataset = dataset
    tracker.complete_step(STEP_DRAW, {"edges": dataset.graph.edge_count})

    if spec.command is Command.SIMULATE:
        record.update(_simulation_summary(dataset))
        single = len(spec.settings) * len(spec.n_list) * spec.reps == 1
        if spec.export_graph:
            write_edge_list(dataset.graph,
                            _export_path(spec.export_graph, setting, n, rep_index, not single))
        if spec.export_data:
            export_dataset(dataset, _export_path(spec.export_data, setting, n, rep_index,
                                                 not single))
        for step in (STEP_RESEARCHER, STEP_GCA, STEP_TEST, STEP_EFFECT):
            tracker.skip_step(step, "simulate only")
        record["timings"] = tracker.timings()
        return outcome

    tracker.start_step(STEP_RESEARCHER)
    researcher = researcher_exposure(RESEARCHER_KIND_BY_SETTING[setting], dataset.graph,
                                     dataset.D, dataset.X)
    outcome.researcher = researcher
    tracker.complete_step(STEP_RESEARCHER, {"kind": researcher.kind.value})

    tracker.start_step(STEP_GCA)
    gca_cfg = spec.gca.model_copy(update={"seed": seed % SEED_MODULUS})
    try:
        model = train(dataset.graph, dataset.D, dataset.X, dataset.Y, gca_cfg)
    except TrainingDivergenceError as e:
        tracker.fail_step(STEP_GCA, {"Error": str(e)})
        _flag(record, "training_divergence", e)
        record["timings"] = tracker.timings()
        return outcome
    learned = learned_exposure(model, dataset.graph, dataset.D, dataset.X)
    outcome.model, outcome.learned = model, learned
    record["gca_final_loss"] = model.final_loss
    tracker.complete_step(STEP_GCA, {"final loss": f"{model.final_loss:.4f}"})

    folds = make_folds(n, spec.nuisance.resolve_folds(n), seed % SEED_MODULUS)

    result = None
    if spec.command in TEST_COMMANDS:
        tracker.start_step(STEP_TEST, {"L": spec.L, "folds": folds.K})
        try:
            result = _run_test(spec, dataset, researcher, learned, folds)
        except DegeneratePartitionError as e:
            tracker.fail_step(STEP_TEST, {"Error": str(e)})
            result = TestResult.inconclusive_result(e.diagnostics)
            if spec.command is not Command.ANALYZE:
                _flag(record, "degenerate_partition", e)
        else:
            tracker.complete_step(STEP_TEST, {"p-value": f"{result.p_value:.4f}"})
        record.update(result.to_record())
    else:
        tracker.skip_step(STEP_TEST, "not requested")

    if spec.command in EFFECT_COMMANDS and not record["flagged"]:
        tracker.start_step(STEP_EFFECT, {"method": spec.method})
        try:
            if spec.command is Command.ANALYZE:
                selected = select_exposure(result, researcher, learned)
                record["selected_exposure"] = selected.kind.value
                estimate = estimate_with_exposure(spec, dataset, selected, folds)
            else:
                estimate = estimate_direct_effect(spec, dataset, learned, model, folds)
        except (EmptyCellError, DegeneratePartitionError) as e:
            tracker.fail_step(STEP_EFFECT, {"Error": str(e)})
            _flag(record, "empty_cell" if isinstance(e, EmptyCellError)
                  else "degenerate_partition", e)
        else:
            record.update(estimate.to_record())
            record["dropped_levels"] = len(estimate.diagnostics.get("dropped_levels", []))
            tracker.complete_step(STEP_EFFECT, {"estimate": f"{estimate.estimate:.4f}"})
    else:
        tracker.skip_step(STEP_EFFECT, "not requested")

    record["timings"] = tracker.timings()
    return outcome


def run_replication(spec: RunSpec, setting, n: int, rep_index: int) -> Dict:
    return replicate(spec, setting, n, rep_index).record


def replication_cells(spec: RunSpec) -> List[Tuple[Setting, int, int]]:
    return [(setting, n, rep) for setting in spec.settings for n in spec.n_list
            for rep in range(spec.reps)]


def _sort_key(record: Dict):
    return list(Setting).index(Setting(record["setting"])), record["n"], record["rep"]


def run_replications(spec: RunSpec) -> List[Dict]:
    cells = replication_cells(spec)
    logger.info("running %d replications on %d worker(s)", len(cells), spec.workers)
    if spec.workers == 1:
        records = [run_replication(spec, *cell) for cell in cells]
    else:
        records = Parallel(n_jobs=spec.workers)(
            delayed(run_replication)(spec, *cell) for cell in cells)
    return sorted(records, key=_sort_key)


@dataclass
class TableReport:
    rows: pd.DataFrame
    missing: List[Tuple[str, int]] = field(default_factory=list)
    metadata: Dict = field(default_factory=dict)

    def cell(self, setting, n: int) -> Optional[pd.Series]:
        key = (Setting(setting).value, int(n))
        if key not in self.rows.index:
            return None
        return self.rows.loc[key]


def _cell_stats(group: pd.DataFrame) -> pd.Series:
    used = group[~group["flagged"]]
    stats = {"reps": len(group), "flagged": int(group["flagged"].sum()), "used": len(used)}
    if "p_value" in used:
        p = used["p_value"].dropna()
        stats["rejection_rate"] = float((p < SIGNIFICANCE_LEVEL).mean()) if len(p) else np.nan
        stats["mean_p_value"] = float(p.mean()) if len(p) else np.nan
    if "estimate" in used:
        est = used["estimate"].dropna()
        stats["est"] = float(est.mean()) if len(est) else np.nan
        stats["std"] = float(est.std(ddof=1)) if len(est) > 1 else 0.0
        stats["bias"] = float((est - TRUE_DIRECT_EFFECT).abs().mean()) if len(est) else np.nan
    for column in ("mean_degree", "mean_Y", "treated_share", "mean_Z_true"):
        if column in used:
            stats[column] = float(used[column].mean())
    return pd.Series(stats)


def aggregate(records: Sequence[Dict], metadata: Optional[Dict] = None) -> TableReport:
    """Per (setting, n): rejection rate and mean p-value, or est / std / bias of the
    direct effect against the true value 1. Flagged replications are left out."""
    if not records:
        raise InvalidArgumentError("no replication records to aggregate")
    frame = pd.DataFrame([{k: v for k, v in r.items() if k not in VOLATILE_KEYS}
                          for r in records])
    frame["flagged"] = frame["flagged"].astype(bool)
    rows = (frame.groupby(["setting", "n"], sort=False)
            .apply(_cell_stats, include_groups=False))
    order = sorted(rows.index, key=lambda key: (list(Setting).index(Setting(key[0])), key[1]))
    rows = rows.loc[order]
    missing = [key for key in rows.index if rows.loc[key, "used"] == 0]
    for setting, n in missing:
        logger.warning("every replication of %s n=%d was flagged; cell reported missing",
                       setting, n)
    meta = dict(metadata or {})
    meta["records"] = len(records)
    meta["flagged"] = int(frame["flagged"].sum())
    meta["flagged_share"] = meta["flagged"] / len(records)
    return TableReport(rows=rows, missing=missing, metadata=meta)


def check_flagged_share(report: TableReport, limit: float = MAX_FLAGGED_SHARE) -> None:
    share = report.metadata.get("flagged_share", 0.0)
    if share > limit:
        raise FlaggedReplicationsError(
            f"{share:.1%} of replications were flagged (limit {limit:.0%})", share)


def _fmt(value, digits: int = 3) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    return f"{value:.{digits}f}"


def render_table1(report: TableReport) -> str:
    """n rows by setting column pairs (rejection rate, mean p-value)."""
    settings = list(dict.fromkeys(s for s, _ in report.rows.index))
    sizes = sorted({n for _, n in report.rows.index})
    lines = ["Validity test: empirical rejection rate at the 0.05 level and mean p-value"]
    lines.append(f"{'':>6}" + "".join(f"{'Setting ' + s[1:] if s.startswith('S') else s:>22}"
                                      for s in settings))
    lines.append(f"{'n':>6}" + "".join(f"{'rej. rate':>12}{'mean p':>10}" for _ in settings))
    for n in sizes:
        cells = []
        for s in settings:
            row = report.cell(s, n)
            if row is None or row["used"] == 0:
                cells.append(f"{'-':>12}{'-':>10}")
            else:
                cells.append(f"{_fmt(row['rejection_rate']):>12}{_fmt(row['mean_p_value']):>10}")
        lines.append(f"{n:>6}" + "".join(cells))
    return "\n".join(lines)


def render_table2(report: TableReport) -> str:
    """n rows by est / std / bias of the averaged direct effect."""
    lines = ["Direct effect estimation (true value 1)",
             f"{'setting':>8}{'n':>7}{'est':>10}{'std':>10}{'bias':>10}"]
    for (setting, n), row in report.rows.iterrows():
        if row["used"] == 0:
            lines.append(f"{setting:>8}{n:>7}{'-':>10}{'-':>10}{'-':>10}")
            continue
        lines.append(f"{setting:>8}{n:>7}{_fmt(row['est']):>10}{_fmt(row['std']):>10}"
                     f"{_fmt(row['bias']):>10}")
    return "\n".join(lines)


def render_report(report: TableReport) -> str:
    parts = []
    if "rejection_rate" in report.rows:
        parts.append(render_table1(report))
    if "est" in report.rows:
        parts.append(render_table2(report))
    if not parts:
        parts.append(report.rows.to_string(float_format=lambda v: f"{v:.4f}"))
    footer = (f"replications: {report.metadata['records']}, flagged: {report.metadata['flagged']}"
              f", base seed: {report.metadata.get('base_seed', '-')}"
              f", config: {report.metadata.get('config_hash', '-')}")
    return "\n\n".join(parts) + "\n\n" + footer + "\n"


def _nondecreasing(values: Iterable[float]) -> bool:
    values = list(values)
    return all(b >= a for a, b in zip(values, values[1:]))


def check_acceptance(report: TableReport) -> List[str]:
    """Reproduction thresholds for the cells present in ``report``; returns failures."""
    failures = []
    rows = report.rows
    if "rejection_rate" in rows:
        for n in (500, 1000):
            row = report.cell(Setting.S1, n)
            if row is not None and row["used"]:
                if not 0.0 <= row["rejection_rate"] <= 0.07:
                    failures.append(f"S1 n={n}: rejection rate {row['rejection_rate']:.3f} > 0.07")
                if row["mean_p_value"] < 0.5:
                    failures.append(f"S1 n={n}: mean p-value {row['mean_p_value']:.3f} < 0.5")
        power = {n: report.cell(Setting.S2, n) for n in TABLE1_SIZES}
        power = {n: r["rejection_rate"] for n, r in power.items() if r is not None and r["used"]}
        if len(power) > 1 and not _nondecreasing(power[n] for n in sorted(power)):
            failures.append(f"S2: rejection rates not nondecreasing in n: {power}")
        if 2000 in power and power[2000] < 0.75 - 0.15:
            failures.append(f"S2 n=2000: rejection rate {power[2000]:.3f} < 0.60")
        for n in TABLE1_SIZES:
            row = report.cell(Setting.S3, n)
            if row is not None and row["used"] and row["rejection_rate"] < 0.65:
                failures.append(f"S3 n={n}: rejection rate {row['rejection_rate']:.3f} < 0.65")
    if "est" in rows:
        row = report.cell(Setting.DIRECT, 1000)
        if row is not None and row["used"]:
            if not 0.85 <= row["est"] <= 1.15:
                failures.append(f"DIRECT n=1000: mean estimate {row['est']:.3f} outside [0.85, 1.15]")
            if not 0.2 <= row["std"] <= 0.45:
                failures.append(f"DIRECT n=1000: s.d. {row['std']:.3f} outside [0.2, 0.45]")
        bias = {n: report.cell(Setting.DIRECT, n) for n in TABLE2_SIZES}
        bias = [r["bias"] for n, r in sorted(bias.items()) if r is not None and r["used"]]
        if len(bias) > 1 and not _nondecreasing(-b for b in bias):
            failures.append(f"DIRECT: bias does not decrease with n: {bias}")
    return failures


def config_hash(spec: RunSpec) -> str:
    payload = spec.model_dump_json(exclude={"workers", "output_path", "check"})
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def json_safe(value):
    """Replace NaN and infinities, which JSON cannot carry, by None at any depth."""
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, (float, np.floating)) and not np.isfinite(value):
        return None
    return value


def write_records(records: Sequence[Dict], path: Path) -> Path:
    """One JSON object per line, sorted keys, volatile fields dropped, non-finite
    numbers written as null."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for record in records:
            stable = {k: v for k, v in record.items() if k not in VOLATILE_KEYS}
            fh.write(json.dumps(json_safe(stable), sort_keys=True, allow_nan=False) + "\n")
    return path


def write_outputs(spec: RunSpec, records: Sequence[Dict],
                  report: TableReport) -> Tuple[Path, Path]:
    out = Path(spec.output_path)
    out.mkdir(parents=True, exist_ok=True)
    records_path = write_records(records, out / f"{spec.command.value}_records.jsonl")
    report_path = out / f"{spec.command.value}_report.txt"
    report_path.write_text(render_report(report))
    return records_path, report_path


def run(spec: RunSpec) -> TableReport:
    """Run every replication of ``spec``, write the records and rendered table."""
    started = time.perf_counter()
    records = run_replications(spec)
    report = aggregate(records, {"base_seed": spec.base_seed, "config_hash": config_hash(spec)})
    report.metadata["wall_time"] = round(time.perf_counter() - started, 3)
    records_path, report_path = write_outputs(spec, records, report)
    logger.info("wrote %s and %s in %.1fs", records_path, report_path,
                report.metadata["wall_time"])
    if spec.command in (Command.REPRODUCE_TABLE1, Command.REPRODUCE_TABLE2):
        check_flagged_share(report)
    return report
