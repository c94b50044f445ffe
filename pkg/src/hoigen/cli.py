"""Command-line entry point: corpus, train, sample, eval, bench.

Settings come from an INI file (``--config``) with sections ``run``,
``paths``, ``model``, ``train``, ``schedule``, ``sample`` and ``bench``;
command-line flags win over the file. Failures print one line
``hoigen-error: <kind>: <message>`` to stderr and exit with status 1
(status 2 for malformed command lines).
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import bench as benchmod
from .checkpoint import CheckpointError, from_model, load_checkpoint, save_checkpoint
from .clipfile import ClipFormatError, write_clip
from .conditions import EmbeddingProvider, StubEmbedding, UnknownLabelError, read_embedding_table
from .corpus import generate_corpus, read_corpus, write_corpus
from .diffusion import LossWeights, ddim_timesteps, make_schedule
from .metrics import evaluate_pairs, format_report
from .network import Denoiser, ModelConfig, default_limb_groups
from .training import TrainConfig, format_log, prepare_dataset, sample_clips, train

ERROR_PREFIX = "hoigen-error"


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


# ------------------------------------------------------------------- config
DESK_MODEL = {"d_model": 64, "n_modules": 4, "k": 3, "n_joints": 24}


@dataclass
class RunConfig:
    command: str = ""
    seed: int = 0
    corpus: str = "corpus"
    out: str = ""
    checkpoint: str = ""
    generated: str = ""
    embeddings: str = ""
    stub_seed: int = 0
    model: dict = field(default_factory=lambda: dict(DESK_MODEL))
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 150
    max_steps: int | None = None
    weight_decay: float = 1e-2
    cond_drop: float = 0.1
    lr_decay: str = "constant"
    weights: LossWeights = LossWeights()
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    sampler_steps: int = 50
    guidance: float = 2.0
    sample_batch: int = 8
    csv: bool = False
    corpus_size: int = 8
    corpus_length: int = 32
    grid: tuple[int, ...] = benchmod.DEFAULT_GRID
    reps: int = 2
    bench_d_model: int = 128
    bench_joints: int = 24

    def model_config(self) -> ModelConfig:
        m = dict(self.model)
        m.setdefault("limb_groups", default_limb_groups(int(m.get("n_joints", 24)) - 1))
        return ModelConfig.from_dict(m)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           max_steps=self.max_steps, weight_decay=self.weight_decay,
                           cond_drop=self.cond_drop, weights=self.weights, seed=self.seed,
                           lr_decay=self.lr_decay)


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _grid(v: str) -> tuple[int, ...]:
    values = tuple(int(x) for x in v.replace(" ", "").split(",") if x)
    if not values or min(values) < 2:
        raise ValueError(f"grid needs lengths >= 2, got {v!r}")
    return values


_MODEL_TYPES = {f.name: f.type for f in fields(ModelConfig)}
_KEYS = {
    ("run", "seed"): ("seed", int),
    ("paths", "corpus"): ("corpus", str),
    ("paths", "out"): ("out", str),
    ("paths", "checkpoint"): ("checkpoint", str),
    ("paths", "generated"): ("generated", str),
    ("paths", "embeddings"): ("embeddings", str),
    ("paths", "stub_seed"): ("stub_seed", int),
    ("train", "lr"): ("lr", float),
    ("train", "batch_size"): ("batch_size", int),
    ("train", "epochs"): ("epochs", int),
    ("train", "max_steps"): ("max_steps", int),
    ("train", "weight_decay"): ("weight_decay", float),
    ("train", "cond_drop"): ("cond_drop", float),
    ("train", "lr_decay"): ("lr_decay", str),
    ("schedule", "t"): ("T", int),
    ("schedule", "beta_start"): ("beta_start", float),
    ("schedule", "beta_end"): ("beta_end", float),
    ("schedule", "steps"): ("sampler_steps", int),
    ("sample", "guidance"): ("guidance", float),
    ("sample", "batch_size"): ("sample_batch", int),
    ("sample", "csv"): ("csv", _parse_bool),
    ("corpus", "size"): ("corpus_size", int),
    ("corpus", "length"): ("corpus_length", int),
    ("bench", "grid"): ("grid", _grid),
    ("bench", "reps"): ("reps", int),
    ("bench", "d_model"): ("bench_d_model", int),
    ("bench", "joints"): ("bench_joints", int),
}
_WEIGHT_KEYS = {"sample_weight": ("sample", float), "object_weight": ("obj", float),
                "smooth_weight": ("smooth", float), "squared": ("squared", _parse_bool)}
_MODEL_PARSERS = {"bool": _parse_bool, "int": int, "str": str}


def load_config(path: str | None) -> RunConfig:
    cfg = RunConfig()
    if not path:
        return cfg
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise CliError("config", f"cannot read {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise CliError("config", f"{path}: {str(exc).splitlines()[0]}") from None
    for section in parser.sections():
        for key, raw in parser.items(section):
            try:
                if section == "model":
                    if key not in _MODEL_TYPES or key == "limb_groups":
                        raise KeyError(key)
                    kind = str(_MODEL_TYPES[key]).split(" ")[0]
                    cfg.model[key] = _MODEL_PARSERS.get(kind, int)(raw)
                elif section == "train" and key in _WEIGHT_KEYS:
                    name, conv = _WEIGHT_KEYS[key]
                    cfg.weights = replace(cfg.weights, **{name: conv(raw)})
                else:
                    name, conv = _KEYS[(section, key)]
                    setattr(cfg, name, conv(raw))
            except KeyError:
                raise CliError("config", f"{path}: unknown key [{section}] {key}") from None
            except ValueError as exc:
                raise CliError("config", f"{path}: [{section}] {key}: {exc}") from None
    return cfg


def apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    cfg.command = args.command
    for flag, name in (("seed", "seed"), ("out", "out"), ("checkpoint", "checkpoint"),
                       ("corpus", "corpus"), ("generated", "generated"),
                       ("guidance", "guidance"), ("grid", "grid"), ("reps", "reps")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "csv", False):
        cfg.csv = True
    steps = getattr(args, "steps", None)
    if steps is not None:
        if args.command == "train":
            cfg.max_steps = steps
        else:
            cfg.sampler_steps = steps
    return cfg


# ----------------------------------------------------------------- helpers
def provider_from(cfg: RunConfig, meta: dict | None = None) -> EmbeddingProvider:
    table = cfg.embeddings or (meta or {}).get("embeddings", "")
    if table:
        try:
            return read_embedding_table(table)
        except (OSError, ValueError) as exc:
            raise CliError("embeddings", f"cannot load table {table}: {exc}") from None
    seed = (meta or {}).get("stub_seed", cfg.stub_seed) if not cfg.embeddings else cfg.stub_seed
    return StubEmbedding(int(seed))


def _load_corpus(directory: str) -> dict:
    path = Path(directory)
    if not path.is_dir():
        raise CliError("corpus", f"corpus directory not found: {directory}")
    try:
        clips = read_corpus(path)
    except ClipFormatError as exc:
        raise CliError("corpus", str(exc)) from None
    if not clips:
        raise CliError("corpus", f"no .hoi clips in {directory}")
    return clips


def write_trajectory_csv(path: Path, clip) -> None:
    """Rows ``frame,name,x,y,z``: world joint positions then object translation."""
    joints = clip.global_positions()
    lines = ["frame,name,x,y,z"]
    for f in range(clip.length):
        lines += [f"{f},joint{j},{p[0]:.6f},{p[1]:.6f},{p[2]:.6f}" for j, p in enumerate(joints[f])]
        o = clip.object_trans[f]
        lines.append(f"{f},object,{o[0]:.6f},{o[1]:.6f},{o[2]:.6f}")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- commands
def cmd_corpus(cfg: RunConfig) -> int:
    try:
        clips = generate_corpus(cfg.corpus_size, cfg.corpus_length, cfg.seed)
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    out = cfg.out or cfg.corpus
    paths = write_corpus(out, clips)
    print(f"wrote {len(paths)} clips to {out}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    try:
        model_cfg = cfg.model_config()
        schedule = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end, cfg.sampler_steps)
        if cfg.model.get("n_steps", 1000) != cfg.T:
            model_cfg = replace(model_cfg, n_steps=cfg.T)
        tcfg = cfg.train_config()
        if tcfg.lr <= 0 or tcfg.batch_size < 1 or tcfg.epochs < 1 or not 0 <= tcfg.cond_drop <= 1:
            raise ValueError("need lr > 0, batch_size >= 1, epochs >= 1 and cond_drop in [0, 1]")
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    clips = _load_corpus(cfg.corpus)
    provider = provider_from(cfg)
    try:
        data = prepare_dataset(list(clips.values()), provider)
    except (ValueError, UnknownLabelError) as exc:
        raise CliError("corpus", str(exc).strip("'\"")) from None
    out = Path(cfg.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    model = Denoiser(model_cfg, np.random.default_rng(cfg.seed))
    log_path = out / "train_log.csv"
    rows: list[dict] = []

    def on_epoch(row):
        rows.append(row)
        log_path.write_text(format_log(rows))

    log_path.write_text(format_log(rows))
    result = train(model, data, schedule, tcfg, on_epoch)
    meta = {"embeddings": cfg.embeddings, "stub_seed": cfg.stub_seed, "steps": result.steps,
            "seed": cfg.seed, "T": cfg.T, "beta_start": cfg.beta_start, "beta_end": cfg.beta_end,
            "length": int(data.human.shape[1])}
    ckpt = out / "model.ckpt"
    save_checkpoint(ckpt, from_model(model, data.stats, meta))
    last = rows[-1]["total"] if rows else float("nan")
    print(f"trained {result.steps} steps, final epoch loss {last:.6f}; wrote {ckpt} and {log_path}")
    return 0


def cmd_sample(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise CliError("config", "sample needs --checkpoint")
    try:
        ckpt = load_checkpoint(cfg.checkpoint)
    except CheckpointError as exc:
        raise CliError("checkpoint", str(exc)) from None
    meta = ckpt.meta
    T = int(meta.get("T", cfg.T))
    try:
        schedule = make_schedule(T, meta.get("beta_start", cfg.beta_start),
                                 meta.get("beta_end", cfg.beta_end), cfg.sampler_steps)
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    if cfg.guidance < 0:
        raise CliError("config", f"guidance must be non-negative, got {cfg.guidance}")
    templates = _load_corpus(cfg.corpus)
    provider = provider_from(cfg, meta)
    model = ckpt.build_model()
    ids = list(templates)
    try:
        for cid in ids:
            provider.embed(templates[cid].label)
    except UnknownLabelError as exc:
        raise CliError("label", str(exc).strip("'\"")) from None
    clips = sample_clips(model, [templates[c] for c in ids], provider, schedule, ckpt.stats,
                         cfg.guidance, cfg.seed, ddim_timesteps(T, cfg.sampler_steps),
                         cfg.sample_batch)
    out = Path(cfg.out or "samples")
    out.mkdir(parents=True, exist_ok=True)
    for cid, clip in zip(ids, clips):
        write_clip(out / f"{cid}.hoi", clip)
        if cfg.csv:
            write_trajectory_csv(out / f"{cid}.csv", clip)
    print(f"sampled {len(clips)} clips ({cfg.sampler_steps} steps, guidance {cfg.guidance}) to {out}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.generated:
        raise CliError("config", "eval needs --generated (directory of generated clips)")
    gt = _load_corpus(cfg.corpus)
    gen = _load_corpus(cfg.generated)
    try:
        rows = evaluate_pairs(gt, gen)
    except KeyError as exc:
        raise CliError("pairing", str(exc).strip("'\"")) from None
    except ValueError as exc:
        raise CliError("pairing", str(exc)) from None
    report = format_report(rows)
    if cfg.out:
        Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.out).write_text(report)
    sys.stdout.write(report)
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    rows = benchmod.run_bench(cfg.grid, cfg.bench_joints, cfg.bench_d_model, cfg.reps, cfg.seed)
    text = benchmod.format_csv(rows) + benchmod.format_summary(rows, 200, cfg.bench_joints,
                                                              cfg.bench_d_model)
    if cfg.out:
        Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.out).write_text(text)
    sys.stdout.write(text)
    return 0


COMMANDS = {"corpus": cmd_corpus, "train": cmd_train, "sample": cmd_sample,
            "eval": cmd_eval, "bench": cmd_bench}


# ------------------------------------------------------------------ parser
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"{ERROR_PREFIX}: usage: {message}\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hoigen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (file for eval/bench reports)")
    common.add_argument("--corpus", help="directory of .hoi clips")

    sub.add_parser("corpus", parents=[common], help="write a procedural clip corpus")
    p = sub.add_parser("train", parents=[common], help="train a denoiser")
    p.add_argument("--steps", type=int, help="stop after this many optimizer steps")
    p = sub.add_parser("sample", parents=[common], help="generate clips for every corpus clip")
    p.add_argument("--checkpoint")
    p.add_argument("--steps", type=int, help="sampler steps (default 50)")
    p.add_argument("--guidance", type=float, help="guidance scale (default 2)")
    p.add_argument("--csv", action="store_true", help="also export trajectories as CSV")
    p = sub.add_parser("eval", parents=[common], help="metrics of generated clips against the corpus")
    p.add_argument("--generated")
    p = sub.add_parser("bench", parents=[common], help="scaling benchmark")
    p.add_argument("--grid", type=_grid, help="comma-separated sequence lengths")
    p.add_argument("--reps", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_flags(load_config(args.config), args)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        sys.stderr.write(f"{ERROR_PREFIX}: {exc.kind}: {exc}\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
