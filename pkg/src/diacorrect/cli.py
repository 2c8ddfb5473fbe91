"""Command line entry point: ``diacorrect <subcommand> [options]``.

Options resolve with precedence flags > config file > defaults.  The config
file is flat ``key = value`` text; ``--config`` names it explicitly, otherwise
the ``DIACORRECT_CONFIG`` environment variable is consulted.  Every flag is
also addressable as a config key (dashes become underscores).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .calibration import apply_bias, bias_grid, sap_histogram, sweep_bias
from .corpus import (
    CorruptionConfig,
    LabelMatrix,
    corrupt_oracle,
    group_by_recording,
    labels_to_segments,
    read_rttm,
    read_sap,
    segments_to_labels,
    write_rttm,
    write_sap,
)
from .features import extract_features, read_features, write_features, write_wav
from .model import ModelConfig, average_checkpoints, correct, load_checkpoint, save_checkpoint
from .pruning import score_corpus, select_hard, selection_fraction
from .scoring import ScoringConfig, decide, der, format_report, median_filter
from .simulate import simulate_conversation
from .training import TrainConfig, train

log = logging.getLogger("diacorrect")

CONFIG_ENV = "DIACORRECT_CONFIG"


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


def _coerce(default, raw, key):
    if raw is None:
        return default
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise CliError(f"bad value for {key}: {raw!r}") from None
    return text


def _build(cls, values: dict):
    kwargs = {}
    for f in fields(cls):
        if f.name in values:
            kwargs[f.name] = _coerce(getattr(cls(), f.name), values[f.name], f.name)
    return cls(**kwargs)


_SCORING_KEYS = {f.name for f in fields(ScoringConfig)}
_CORRUPTION_KEYS = {f.name for f in fields(CorruptionConfig)} - {"seed"}
_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    lower: float = 12.0
    upper: float = 40.0
    bias_lo: float = -3.0
    bias_hi: float = 3.0
    bias_step: float = 0.25
    bins: int = 50
    jobs: int = 1
    seed: int = 0

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        plain = {f.name for f in fields(cls)} - {"train", "scoring", "corruption", "model"}
        known = _SCORING_KEYS | _CORRUPTION_KEYS | _MODEL_KEYS | _TRAIN_KEYS | plain
        unknown = sorted(set(values) - known)
        if unknown:
            raise CliError(f"unknown config key(s): {', '.join(unknown)}")
        base = cls()
        top = {k: _coerce(getattr(base, k), values[k], k) for k in plain if k in values}
        seed = top.get("seed", 0)
        try:
            train_cfg = TrainConfig.from_mapping({**{k: values[k] for k in _TRAIN_KEYS if k in values}, "seed": seed})
            return cls(
                train=train_cfg,
                scoring=_build(ScoringConfig, {k: values[k] for k in _SCORING_KEYS if k in values}),
                corruption=_build(CorruptionConfig, {k: values[k] for k in _CORRUPTION_KEYS if k in values}),
                model=_build(ModelConfig, {k: values[k] for k in _MODEL_KEYS if k in values}),
                **top,
            )
        except ValueError as exc:
            raise CliError(f"invalid config: {exc}") from None

    def grid(self) -> list[float]:
        if self.bias_step <= 0 or self.bias_hi < self.bias_lo:
            raise CliError("calibration grid needs bias_step > 0 and bias_hi >= bias_lo")
        return bias_grid(self.bias_lo, self.bias_hi, self.bias_step)


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve_config(args: argparse.Namespace, keys: list[str]) -> ExperimentConfig:
    cfg_path = args.config or os.environ.get(CONFIG_ENV)
    values = read_config_file(cfg_path) if cfg_path else {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return ExperimentConfig.from_mapping(values)


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    recording_id: str
    feat: Path
    sap: Path
    rttm: Path


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise CliError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        rec, *files = parts
        resolved = [p if p.is_absolute() else path.parent / p for p in map(Path, files)]
        for p in resolved:
            if not p.is_file():
                raise CliError(f"{path}:{lineno}: missing file {p}")
        entries.append(ManifestEntry(rec, *resolved))
    return entries


def write_manifest(path, entries) -> None:
    path = Path(path)
    lines = []
    for e in entries:
        files = []
        for p in (e.feat, e.sap, e.rttm):
            try:
                files.append(str(Path(p).resolve().relative_to(path.parent.resolve())))
            except ValueError:
                files.append(str(Path(p).resolve()))
        lines.append("\t".join([e.recording_id, *files]) + "\n")
    path.write_text("".join(lines))


def _labels_for(entry: ManifestEntry, sap) -> LabelMatrix:
    segments = [s for s in read_rttm(entry.rttm) if s.recording_id == entry.recording_id]
    names = sorted({s.speaker for s in segments})
    if set(names) <= set(sap.speakers):
        speakers = list(sap.speakers)
    elif len(names) <= 2:
        speakers = names + [f"_pad{i}" for i in range(2 - len(names))]
    else:
        raise CliError(f"{entry.rttm}: {len(names)} speakers, only 2 supported")
    return segments_to_labels(segments, speakers, len(sap))


def load_entry(entry: ManifestEntry, with_features: bool = True):
    sap = read_sap(entry.sap)
    labels = _labels_for(entry, sap)
    feats = read_features(entry.feat) if with_features else None
    if feats is not None and len(feats) != len(sap):
        raise CliError(f"recording {entry.recording_id}: {len(feats)} feature frames vs {len(sap)} SAP frames")
    return feats, sap, labels


# ---------------------------------------------------------------------------
# subcommands


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    if args.n < 0:
        raise CliError("n must be non-negative")
    out = _outdir(args.outdir)
    for sub in ("wav", "rttm", "sap", "feat"):
        (out / sub).mkdir(exist_ok=True)
    entries = []
    for i in range(args.n):
        rec = f"rec{i:04d}"
        rec_seed = cfg.seed * 1_000_003 + i
        audio, labels = simulate_conversation(rec_seed, args.duration, recording_id=rec)
        sap = corrupt_oracle(labels, replace(cfg.corruption, seed=rec_seed))
        entry = ManifestEntry(rec, out / "feat" / f"{rec}.feat", out / "sap" / f"{rec}.sap", out / "rttm" / f"{rec}.rttm")
        write_wav(out / "wav" / f"{rec}.wav", audio)
        write_features(entry.feat, extract_features(audio))
        write_sap(entry.sap, sap)
        entry.rttm.write_text(write_rttm(labels_to_segments(labels, rec)))
        entries.append(entry)
    write_manifest(out / "manifest.tsv", entries)
    print(f"wrote {len(entries)} recordings to {out / 'manifest.tsv'}")
    return 0


def _train(args, cfg: ExperimentConfig, init=None) -> int:
    entries = read_manifest(args.manifest)
    if not entries:
        raise CliError(f"manifest {args.manifest} lists no recordings")
    out = _outdir(args.outdir)
    corpus = [load_entry(e) for e in entries]

    def report(epoch, loss):
        print(f"epoch {epoch}\tloss {loss:.6f}", flush=True)

    ckpts = train(corpus, cfg.train, model_config=cfg.model, init=init, on_epoch=report)
    for k, m in enumerate(ckpts, 1):
        save_checkpoint(out / f"epoch{k}.ckpt", m, {"epoch": k, "seed": cfg.seed})
    save_checkpoint(out / "avg.ckpt", average_checkpoints(ckpts), {"averaged_epochs": len(ckpts), "seed": cfg.seed})
    print(f"wrote {len(ckpts)} checkpoints and {out / 'avg.ckpt'}")
    return 0


def cmd_train(args, cfg):
    return _train(args, cfg)


def cmd_finetune(args, cfg):
    if not Path(args.init).is_file():
        raise CliError(f"checkpoint not found: {args.init}")
    return _train(args, cfg, init=load_checkpoint(args.init))


def cmd_prune(args, cfg: ExperimentConfig) -> int:
    entries = read_manifest(args.manifest)
    out = _outdir(args.outdir)
    items = []
    for e in entries:
        _, sap, labels = load_entry(e, with_features=False)
        items.append((e.recording_id, sap, labels))
    table = score_corpus(items, jobs=cfg.jobs)
    selected = select_hard(table, cfg.lower, cfg.upper)
    keep = set(selected)
    (out / "prune_table.tsv").write_text(table.to_tsv())
    (out / "selected_ids.txt").write_text("".join(f"{rec}\n" for rec in selected))
    write_manifest(out / "manifest.tsv", [e for e in entries if e.recording_id in keep])
    frac = selection_fraction(table, selected)
    print(f"kept {len(keep)}/{len(table)} recordings ({100 * frac:.1f}%) with DER in [{cfg.lower}, {cfg.upper}]")
    if not keep:
        print("warning: pruning window excludes every recording", file=sys.stderr)
    return 0


def _sap_ref_pairs(entries):
    pairs = []
    for e in entries:
        _, sap, labels = load_entry(e, with_features=False)
        pairs.append((sap, labels_to_segments(labels, e.recording_id)))
    return pairs


def cmd_calibrate(args, cfg: ExperimentConfig) -> int:
    grid = cfg.grid()
    entries = read_manifest(args.manifest)
    if not entries:
        raise CliError(f"manifest {args.manifest} lists no recordings")
    out = _outdir(args.outdir)
    curve = sweep_bias(_sap_ref_pairs(entries), grid, cfg.scoring, jobs=cfg.jobs)
    (out / "curve.tsv").write_text(curve.to_tsv())
    (out / "best_bias.txt").write_text(f"{curve.best_bias!r}\n")
    if args.eval_manifest:
        # eval sweep is recorded for plotting only; the bias stays dev-selected
        eval_curve = sweep_bias(_sap_ref_pairs(read_manifest(args.eval_manifest)), grid, cfg.scoring, jobs=cfg.jobs)
        (out / "eval_curve.tsv").write_text(eval_curve.to_tsv())
    zero = dict(curve.points).get(0.0)
    extra = f" (bias 0: {zero:.2f}%)" if zero is not None else ""
    print(f"best_bias {curve.best_bias}\tDER {curve.best_der:.2f}%{extra}")
    return 0


def cmd_infer(args, cfg: ExperimentConfig) -> int:
    entries = read_manifest(args.manifest)
    out = _outdir(args.outdir)
    (out / "rttm").mkdir(exist_ok=True)
    model = None
    if args.model:
        if not Path(args.model).is_file():
            raise CliError(f"checkpoint not found: {args.model}")
        model = load_checkpoint(args.model)
    rows = []
    for e in entries:
        feats, sap, labels = load_entry(e, with_features=model is not None)
        sap = apply_bias(sap, args.bias)
        if model is not None:
            sap = correct(model, feats, sap)
        hyp = labels_to_segments(decide(sap, cfg.scoring), e.recording_id)
        (out / "rttm" / f"{e.recording_id}.rttm").write_text(write_rttm(hyp))
        rows.append((e.recording_id, der(labels_to_segments(labels, e.recording_id), hyp, cfg.scoring)))
    report = format_report(rows)
    (out / "report.tsv").write_text(report)
    print(report.splitlines()[-1])
    return 0


def _smooth(segments, width: int, resolution: float = 0.1):
    if width == 1 or not segments:
        return list(segments)
    speakers = sorted({s.speaker for s in segments})
    n = int(round(max(s.offset for s in segments) / resolution)) + 1
    labels = median_filter(segments_to_labels(segments, speakers, n), width)
    return labels_to_segments(labels, segments[0].recording_id)


def cmd_score(args, cfg: ExperimentConfig) -> int:
    for p in (args.ref, args.hyp):
        if not Path(p).is_file():
            raise CliError(f"RTTM not found: {p}")
    refs = group_by_recording(read_rttm(args.ref))
    hyps = group_by_recording(read_rttm(args.hyp))
    # the median filter was already applied to hypotheses derived from logits;
    # here it acts on the RTTM segments rasterized to the 0.1 s grid
    width = cfg.scoring.median_frames
    plain = replace(cfg.scoring, median_frames=1)
    rows = []
    for rec in sorted(set(refs) | set(hyps)):
        rows.append((rec, der(refs.get(rec, []), _smooth(hyps.get(rec, []), width), plain)))
    report = format_report(rows)
    if args.out:
        Path(args.out).write_text(report)
    sys.stdout.write(report)
    return 0


def cmd_plotdist(args, cfg: ExperimentConfig) -> int:
    entries = read_manifest(args.manifest)
    out = _outdir(args.outdir)
    pairs = []
    for e in entries:
        _, sap, labels = load_entry(e, with_features=False)
        pairs.append((apply_bias(sap, args.bias), labels))
    hist = sap_histogram(pairs, bins=cfg.bins)
    (out / "histogram.tsv").write_text(hist.to_tsv())
    print(f"wrote {out / 'histogram.tsv'} ({int(hist.speech_counts.sum() + hist.silence_counts.sum())} cells)")
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # keep usage errors to one parseable line
        raise CliError(message)


def _add_keys(p, keys):
    for key in keys:
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="V")
    p.set_defaults(config_keys=list(keys) + ["seed", "jobs"])


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help=f"key=value config file (default: ${CONFIG_ENV})")
    common.add_argument("--seed", default=None, help="seed for every random draw")
    common.add_argument("--jobs", default=None, help="per-recording parallelism")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="diacorrect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    corruption = ["flip_prob", "logit_noise_std", "logit_scale", "global_bias"]
    scoring = ["collar", "median_frames", "threshold_logit"]
    model = ["emb_dim", "sap_hidden", "conv_channels", "decoder_layers", "attn_heads", "ff_dim", "dropout"]
    training = ["epochs", "learning_rate", "beta1", "beta2", "chunk_frames", "batch_size", "max_steps", "grad_clip"]

    p = sub.add_parser("simulate", parents=[common], help="simulate conversations with corrupted oracle SAPs")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--outdir", required=True)
    _add_keys(p, corruption)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train a correction model from scratch")
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    _add_keys(p, training + model)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", parents=[common], help="continue training from a checkpoint")
    p.add_argument("--init", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    _add_keys(p, training)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("prune", parents=[common], help="keep recordings whose initial DER lies in a window")
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    _add_keys(p, ["lower", "upper"])
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("calibrate", parents=[common], help="sweep a global SAP bias on a dev set")
    p.add_argument("--manifest", required=True, help="dev manifest the bias is selected on")
    p.add_argument("--eval-manifest", help="optional eval manifest, swept for plotting only")
    p.add_argument("--outdir", required=True)
    _add_keys(p, ["bias_lo", "bias_hi", "bias_step"] + scoring)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("infer", parents=[common], help="correct SAPs, write RTTMs and a score report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", help="checkpoint; without it the initial SAPs are scored")
    p.add_argument("--bias", type=float, default=0.0, help="calibration bias subtracted from initial SAPs")
    p.add_argument("--outdir", required=True)
    _add_keys(p, scoring)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("score", parents=[common], help="DER of a hypothesis RTTM against a reference RTTM")
    p.add_argument("ref")
    p.add_argument("hyp")
    p.add_argument("--median", dest="median_frames", default=None, metavar="N")
    p.add_argument("--out")
    _add_keys(p, ["collar"])
    p.set_defaults(func=cmd_score, config_keys=["collar", "median_frames", "seed", "jobs"])

    p = sub.add_parser("plotdist", aliases=["plot-dist"], parents=[common], help="histogram of SAP logits by class")
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--bias", type=float, default=0.0)
    _add_keys(p, ["bins"])
    p.set_defaults(func=cmd_plotdist)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args, args.config_keys)
        return args.func(args, cfg)
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        msg = str(exc).replace("\n", " ").strip() or type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
