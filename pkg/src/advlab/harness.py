"""Experiment runner: baseline, attack phases, defence, and report files.

Every attack phase is measured in one primary view:

* ``evasion``: the baseline model scores a perturbed copy of the test split
  (Self-MDS, JSMA, FGSM);
* ``poisoning``: a model retrained from the same initialisation on the
  corrupted training split scores the clean test split (LFA, GSelf-MDS).

The other view is computed too and kept as a secondary measurement in the
JSON-lines output. The master seed drives every nested seed, so a config
and seed fully determine the report files.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import nn
from .attacks import AttackConfig, aself_mds_attack, self_mds_attack
from .attacks.gan import GanConfig, gself_mds_attack, train_gan
from .data import Dataset, SynthConfig, fit_normalize, load_csv, make_stream, split, synth_generate
from .defence import DefenceConfig, self_train
from .errors import AdvLabError, ConfigurationError
from .metrics import METRIC_KEYS, MetricsReport, evaluate, format_value

log = logging.getLogger(__name__)

ATTACK_KINDS = ("self-mds", "gself-mds", "aself-mds-lfa", "aself-mds-jsma", "aself-mds-fgsm")
BASELINE = "Without Attack"
# attack kind -> (attack row label, short name used in the defence row)
PHASE_NAMES = {
    "self-mds": ("Self-MDS", "Self"),
    "gself-mds": ("GSelf-MDS", "GSelf"),
    "aself-mds-lfa": ("ASelf-MDS-LFA", "LFA"),
    "aself-mds-jsma": ("ASelf-MDS-JSMA", "JSMA"),
    "aself-mds-fgsm": ("ASelf-MDS-FGSM", "FGSM"),
}
PRIMARY_VIEW = {"self-mds": "evasion", "gself-mds": "poisoning", "aself-mds-lfa": "poisoning",
                "aself-mds-jsma": "evasion", "aself-mds-fgsm": "evasion"}

# published (F1, AUC) percentages per dataset, keyed by this module's row labels
REFERENCE_TABLE = {
    "IoT-23": {
        "Without Attack": (99.19, 95.96),
        "Self-MDS": (88.60, 60.28), "ST-Def (Self)": (96.17, 72.34),
        "GSelf-MDS": (84.67, 51.78), "ST-Def (GSelf)": (95.16, 62.43),
        "ASelf-MDS-LFA": (87.48, 54.59), "ST-Def (LFA)": (94.28, 63.24),
        "ASelf-MDS-JSMA": (87.85, 52.77), "ST-Def (JSMA)": (95.41, 64.93),
        "ASelf-MDS-FGSM": (86.46, 52.80), "ST-Def (FGSM)": (95.09, 64.09),
    },
    "NBIoT": {
        "Without Attack": (99.26, 88.76),
        "Self-MDS": (88.34, 44.14), "ST-Def (Self)": (94.72, 53.56),
        "GSelf-MDS": (88.55, 47.34), "ST-Def (GSelf)": (95.02, 53.00),
        "ASelf-MDS-LFA": (86.64, 56.00), "ST-Def (LFA)": (95.83, 66.64),
        "ASelf-MDS-JSMA": (88.11, 55.88), "ST-Def (JSMA)": (95.30, 70.50),
        "ASelf-MDS-FGSM": (86.06, 53.41), "ST-Def (FGSM)": (94.84, 66.69),
    },
}

REPORT_CSV, REPORT_JSONL, PLOT_CSV, CONFIG_JSON, TIMING_JSON = (
    "report.csv", "report.jsonl", "plot_data.csv", "config.json", "timing.json")
FORMATS = {"csv": REPORT_CSV, "json-lines": REPORT_JSONL, "plot-data": PLOT_CSV}


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class PhaseConfig:
    kind: str
    attack: AttackConfig = field(default_factory=AttackConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    fake_multiplier: float = 2.0  # GSelf-MDS fakes per benign training sample

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigurationError(f"unknown attack kind {self.kind!r}; choose from {ATTACK_KINDS}")
        if not self.fake_multiplier > 0:
            raise ConfigurationError("fake_multiplier must be > 0")

    def to_dict(self):
        out = {"kind": self.kind, "attack": asdict(self.attack)}
        if self.kind == "gself-mds":
            out["gan"] = asdict(self.gan)
            out["fake_multiplier"] = self.fake_multiplier
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    phases: tuple = tuple(PhaseConfig(k) for k in ATTACK_KINDS)
    data_path: str | None = None
    label_column: str = "label"
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: str = "cnn"
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    defence: bool = True
    defence_config: DefenceConfig = field(default_factory=DefenceConfig)
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if not self.phases:
            raise ConfigurationError("an experiment needs at least one attack phase")
        if self.model not in ("cnn", "mlp"):
            raise ConfigurationError(f"model must be 'cnn' or 'mlp', got {self.model!r}")
        object.__setattr__(self, "phases", tuple(self.phases))

    def resolved(self):
        """Copy with every nested seed set from the master seed."""
        s = self.seed
        return replace(
            self,
            synth=replace(self.synth, seed=s),
            train=replace(self.train, seed=s),
            defence_config=replace(self.defence_config, seed=s),
            phases=tuple(replace(p, attack=replace(p.attack, seed=s), gan=replace(p.gan, seed=s))
                         for p in self.phases),
        )

    def to_dict(self):
        cfg = self.resolved()
        return {
            "seed": cfg.seed,
            "model": cfg.model,
            "data": {"path": cfg.data_path, "label_column": cfg.label_column},
            "synth": asdict(cfg.synth),
            "train": asdict(cfg.train),
            "phases": [p.to_dict() for p in cfg.phases],
            "defence": {"enabled": cfg.defence, **asdict(cfg.defence_config)},
            "out_dir": cfg.out_dir,
        }


def _build(cls, values, where):
    values = dict(values or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {unknown}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


def config_from_dict(raw):
    """Build an ExperimentConfig from nested plain data (a parsed JSON/YAML file).

    Top-level ``attack`` and ``gan`` sections set defaults that each phase
    entry (a kind string, or a mapping with its own sections) can override.
    """
    raw = dict(raw or {})
    allowed = {"seed", "model", "data", "synth", "train", "attack", "gan", "fake_multiplier",
               "phases", "defence", "out_dir"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigurationError(f"config: unknown key(s) {unknown}")
    attack = dict(raw.get("attack") or {})
    gan = dict(raw.get("gan") or {})
    multiplier = raw.get("fake_multiplier", PhaseConfig.fake_multiplier)
    phases = []
    for entry in raw.get("phases", ATTACK_KINDS):
        if isinstance(entry, str):
            entry = {"kind": entry}
        entry = dict(entry)
        extra = sorted(set(entry) - {"kind", "attack", "gan", "fake_multiplier"})
        if extra or "kind" not in entry:
            raise ConfigurationError(f"phase entry {entry!r}: needs 'kind', unknown key(s) {extra}")
        kind = entry["kind"]
        phases.append(PhaseConfig(
            kind,
            _build(AttackConfig, {**attack, **(entry.get("attack") or {})}, f"phase {kind} attack"),
            _build(GanConfig, {**gan, **(entry.get("gan") or {})}, f"phase {kind} gan"),
            entry.get("fake_multiplier", multiplier)))
    data = dict(raw.get("data") or {})
    if sorted(set(data) - {"path", "label_column"}):
        raise ConfigurationError("data: only 'path' and 'label_column' are allowed")
    defence = raw.get("defence", True)
    if isinstance(defence, bool):
        enabled, defence_cfg = defence, DefenceConfig()
    else:
        defence = dict(defence)
        enabled = bool(defence.pop("enabled", True))
        defence_cfg = _build(DefenceConfig, defence, "defence")
    return ExperimentConfig(
        phases=tuple(phases),
        data_path=data.get("path"),
        label_column=data.get("label_column", "label"),
        synth=_build(SynthConfig, raw.get("synth"), "synth"),
        model=raw.get("model", "cnn"),
        train=_build(nn.TrainConfig, raw.get("train"), "train"),
        defence=enabled,
        defence_config=defence_cfg,
        seed=int(raw.get("seed", 0)),
        out_dir=raw.get("out_dir"),
    )


def load_config(path):
    """Read a JSON or YAML experiment file."""
    import yaml

    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"{path}: cannot parse config: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: config must be a mapping")
    return config_from_dict(raw)


# -- report ------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseRow:
    label: str
    role: str  # baseline | attack | defence
    view: str  # clean | evasion | poisoning
    metrics: MetricsReport
    secondary: dict = field(default_factory=dict)

    def record(self):
        return {"phase": self.label, "view": self.view, **self.metrics.to_record()}


@dataclass
class ExperimentReport:
    rows: list
    config: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)  # seconds per phase; never byte-compared

    def labels(self):
        return [r.label for r in self.rows]

    def row(self, label):
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def metric_table(self):
        """Rows as flat text records, the form stored in the CSV."""
        return [r.record() for r in self.rows]


@contextmanager
def _phase(name):
    try:
        yield
    except AdvLabError as exc:
        exc.phase = name
        exc.args = (f"{name}: {exc}",) + exc.args[1:]
        raise


def _load(cfg):
    if cfg.data_path is not None:
        return load_csv(cfg.data_path, cfg.label_column)
    return synth_generate(cfg.synth)


def _spec(cfg, dataset):
    m, c = dataset.feature_count, dataset.class_count
    return nn.cnn_spec(m, c) if cfg.model == "cnn" else nn.mlp_spec(m, c)


class Context:
    """Artifacts shared by every phase of one run."""

    def __init__(self, cfg, dataset, train_set, val_set, test_set, initial, baseline):
        self.cfg = cfg
        self.positive, self.benign = class_roles(dataset.label_names)
        self.dataset = dataset
        self.train_set = train_set
        self.val_set = val_set
        self.test_set = test_set
        self.initial = initial
        self.baseline = baseline

    def retrain(self, train_set):
        return nn.train(self.initial, train_set, self.cfg.train)[0]

    def evaluate(self, model, dataset):
        return evaluate(model, dataset, self.positive)

    def baseline_row(self):
        return PhaseRow(BASELINE, "baseline", "clean", self.evaluate(self.baseline, self.test_set),
                        {"validation": self.evaluate(self.baseline, self.val_set).as_dict()})


def class_roles(label_names):
    """(malware class id, benign class id) for a binary label set.

    Names "malware"/"benign" are honoured wherever first appearance put
    them; otherwise class 1 is malware and class 0 benign.
    """
    names = [str(n).lower() for n in label_names]
    if "malware" in names:
        positive = names.index("malware")
        return positive, names.index("benign") if "benign" in names else 1 - positive
    if "benign" in names:
        benign = names.index("benign")
        return 1 - benign, benign
    return 1, 0


def prepare(config, model=None):
    """Load, normalise and split the data, then train (or adopt) the baseline."""
    cfg = config.resolved()
    with _phase("data"):
        dataset, _ = fit_normalize(_load(cfg))
        train_set, val_set, test_set = split(dataset, cfg.seed)
    with _phase(BASELINE):
        initial = nn.build_classifier(_spec(cfg, dataset), cfg.seed, dataset.feature_count)
        if model is None:
            model, _ = nn.train(initial, train_set, cfg.train)
        elif model.input_width != dataset.feature_count:
            raise ConfigurationError(f"model expects {model.input_width} features, "
                                     f"data has {dataset.feature_count}")
    return Context(cfg, dataset, train_set, val_set, test_set, initial, model)


def _features_only(target, perturbed):
    """``target`` with perturbed features but its own (true) labels."""
    return target.replace(features=perturbed.apply_to(target).features)


def _attack(ctx, phase):
    """Returns (attack metrics, secondary, defence pool, model to harden, defence eval set)."""
    tr, te, base = ctx.train_set, ctx.test_set, ctx.baseline
    ac = phase.attack
    evaluate = ctx.evaluate
    if phase.kind == "self-mds":
        stream = make_stream(Dataset.concat([tr, te]), len(tr))
        attacked = _features_only(te, self_mds_attack(stream, base, ac))
        pool = self_mds_attack(make_stream(tr, 0), base, ac)
        secondary = evaluate(ctx.retrain(pool.apply_to(tr)), te)
        return evaluate(base, attacked), secondary, pool, base, attacked
    if phase.kind in ("aself-mds-jsma", "aself-mds-fgsm"):
        perturber = [phase.kind.rsplit("-", 1)[1].upper()]
        attacked = _features_only(te, aself_mds_attack(te, base, ac, perturber))
        pool = aself_mds_attack(tr, base, ac, perturber)
        secondary = evaluate(ctx.retrain(pool.apply_to(tr)), te)
        return evaluate(base, attacked), secondary, pool, base, attacked
    if phase.kind == "aself-mds-lfa":
        pool = aself_mds_attack(tr, base, ac, ["LFA"])
        poisoned = ctx.retrain(pool.apply_to(tr))
        secondary = evaluate(base, _features_only(te, aself_mds_attack(te, base, ac, ["LFA"])))
        return evaluate(poisoned, te), secondary, pool, poisoned, te
    # gself-mds: a GAN fitted to benign training traffic emits fakes labelled malware
    benign = tr.subset(np.flatnonzero(tr.labels == ctx.benign))
    gan = train_gan(benign, phase.gan)
    count = max(1, int(round(phase.fake_multiplier * len(benign))))
    pool = gself_mds_attack(gan, count, phase.gan.seed, label=ctx.positive,
                            id_start=ctx.dataset.next_id())
    poisoned = ctx.retrain(Dataset.concat([tr, pool.samples]))
    secondary = evaluate(base, Dataset.concat([te, pool.samples]))
    return evaluate(poisoned, te), secondary, pool, poisoned, te


@dataclass
class PhaseOutcome:
    attack_row: PhaseRow
    pool: object  # the PerturbedSet the defence trains on
    defence_row: PhaseRow | None = None
    defence: object = None  # DefenceResult


def run_phase(ctx, phase, defence=None):
    """One attack phase, then (if ``defence`` is true) its self-training defence."""
    defence = ctx.cfg.defence if defence is None else defence
    label, short = PHASE_NAMES[phase.kind]
    view = PRIMARY_VIEW[phase.kind]
    other = "poisoning" if view == "evasion" else "evasion"
    with _phase(label):
        metrics, secondary, pool, target, eval_set = _attack(ctx, phase)
    row = PhaseRow(label, "attack", view, metrics,
                   {"view": other, **secondary.as_dict(), "perturbed": len(pool)})
    log.info("%s: accuracy %.4f (%d perturbed samples)", label, metrics.accuracy, len(pool))
    outcome = PhaseOutcome(row, pool)
    if defence:
        def_label = f"ST-Def ({short})"
        with _phase(def_label):
            result = self_train(pool, ctx.train_set, target, ctx.cfg.defence_config)
            outcome.defence = result
            outcome.defence_row = PhaseRow(
                def_label, "defence", view, ctx.evaluate(result.model, eval_set),
                {"corrected": len(result.corrected),
                 "consistency_first": result.consistency[0] if result.consistency else None,
                 "consistency_last": result.consistency[-1] if result.consistency else None})
    return outcome


def run_experiment(config):
    """Run the full pipeline and return an ExperimentReport."""
    start = time.perf_counter()
    ctx = prepare(config)
    rows = [ctx.baseline_row()]
    timing = {BASELINE: time.perf_counter() - start}
    for phase in ctx.cfg.phases:
        t0 = time.perf_counter()
        outcome = run_phase(ctx, phase)
        rows.append(outcome.attack_row)
        if outcome.defence_row is not None:
            rows.append(outcome.defence_row)
        timing[outcome.attack_row.label] = time.perf_counter() - t0
    timing["total"] = time.perf_counter() - start
    echo = config.to_dict()
    echo["data"]["label_names"] = list(ctx.dataset.label_names)
    echo["data"]["positive_class"] = ctx.positive
    return ExperimentReport(rows, echo, timing)


# -- emission ----------------------------------------------------------------


def _header(reference):
    head = ["phase", "view", *METRIC_KEYS]
    return head + ["reference_f1", "reference_auc"] if reference else head


def _reference_cells(reference, label):
    values = REFERENCE_TABLE[reference].get(label)
    return ["", ""] if values is None else [f"{values[0]:.2f}", f"{values[1]:.2f}"]


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def emit_report(report, out_dir, formats=("csv", "json-lines", "plot-data"), reference=None):
    """Write the report files into ``out_dir`` and return their paths.

    ``reference`` names a published dataset ("IoT-23" or "NBIoT") whose F1
    and AUC percentages are added as side-by-side annotation columns.
    """
    if reference is not None and reference not in REFERENCE_TABLE:
        raise ConfigurationError(f"reference must be one of {sorted(REFERENCE_TABLE)}")
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigurationError(f"unknown report format(s) {bad}; choose from {sorted(FORMATS)}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        if "csv" in formats:
            rows = []
            for r in report.rows:
                rec = r.record()
                cells = [rec[k] for k in ("phase", "view", *METRIC_KEYS)]
                rows.append(cells + (_reference_cells(reference, r.label) if reference else []))
            paths.append(out / REPORT_CSV)
            _write_csv(paths[-1], _header(reference), rows)
        if "json-lines" in formats:
            lines = []
            for r in report.rows:
                lines.append(json.dumps({
                    "phase": r.label, "role": r.role, "view": r.view,
                    "metrics": r.metrics.as_dict(),
                    "secondary": {k: _json_value(v) for k, v in r.secondary.items()},
                }, sort_keys=True))
            paths.append(out / REPORT_JSONL)
            paths[-1].write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        if "plot-data" in formats:
            rows = [[r.label, k, format_value(getattr(r.metrics, k))]
                    for r in report.rows for k in METRIC_KEYS]
            paths.append(out / PLOT_CSV)
            _write_csv(paths[-1], ["phase", "metric", "value"], rows)
        paths.append(out / CONFIG_JSON)
        paths[-1].write_text(json.dumps(report.config, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
        if report.timing:
            timing = {k: round(v, 3) for k, v in report.timing.items()}
            (out / TIMING_JSON).write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report files: {exc.strerror}", str(out)) from exc
    return paths


def read_report_csv(path):
    """Parse a report CSV back into an ExperimentReport (metric table only)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            label = rec["phase"]
            role = ("baseline" if label == BASELINE else
                    "defence" if label.startswith("ST-Def") else "attack")
            rows.append(PhaseRow(label, role, rec["view"], MetricsReport.from_record(rec)))
    return ExperimentReport(rows)
