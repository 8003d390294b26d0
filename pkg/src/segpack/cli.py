"""Experiment CLI: corpus generation, single runs, and the full grid.

Verbs
-----
gen         synthesize a corpus to disk
train       train one cell (baseline or one placement) and save the model
grid        run a sweep of placements x boundary sources (+ baseline) and
            emit per-cell reports plus significance-annotated summary tables
eval        recompute a retrieval report from a saved model
export-emb  dump caption and image embeddings as text

All verbs read a JSON config (``--config``); ``--seed`` overrides the
config seed.  Grids derive one seed per cell from (grid seed, cell index),
so cells are independent of execution order and a rerun with the same
config and seed writes byte-identical tables.

Exit codes: 0 success, 1 at least one failed grid cell, 2 bad config.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation, synthcorpus, training
from .encoder import (ConvSpec, EncoderConfig, LayerSpec, config_from_dict, init_params,
                      load_model, save_model, validate_config)
from .inventory import Inventory
from .segmentation import LEVELS
from .synthcorpus import SynthSpec, VocabWord
from .training import TrainConfig

_LEVEL_ORDER = {level: i for i, level in enumerate(LEVELS)}


class CliConfigError(ValueError):
    """Bad or missing configuration input."""


@dataclass(frozen=True)
class Placement:
    """Which layers become packagers, with which levels, in which mode."""

    layers: tuple[int, ...]   # 1-based, bottom layer is 1
    levels: tuple[str, ...]
    mode: str

    def key(self) -> tuple[str, str]:
        rows = "L" + "+".join(str(i) for i in self.layers)
        cols = "+".join(self.levels)
        return rows, cols


@dataclass(frozen=True)
class Cell:
    index: int
    name: str
    placement: Placement | None  # None is the all-vanilla baseline
    source: str                  # "TRUE" | "RANDOM" (baseline: "TRUE")


@dataclass
class CellResult:
    cell: Cell
    recalls: dict[int, float] | None = None
    hits_at_1: np.ndarray | None = None
    n_queries: int = 0
    best_epoch: int = 0
    error: str | None = None


# ---------------------------------------------------------------------------
# config parsing


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliConfigError(f"cannot read config {path}: {exc}") from exc


def _synth_spec(cfg: dict) -> SynthSpec:
    kwargs = dict(cfg)
    if "vocab" in kwargs:
        kwargs["vocab"] = [
            VocabWord(label=w["label"], phones=tuple(w["phones"]),
                      syllables=tuple(w["syllables"]), is_object=w.get("is_object", False))
            for w in kwargs["vocab"]
        ]
    if "inventory" in kwargs:
        inv = kwargs["inventory"]
        kwargs["inventory"] = Inventory(vowels=frozenset(inv["vowels"]),
                                        consonants=frozenset(inv["consonants"]),
                                        onsets=frozenset(inv["onsets"]))
    for rng_key in ("frames_per_phone", "caption_len", "objects_per_image"):
        if rng_key in kwargs:
            kwargs[rng_key] = tuple(kwargs[rng_key])
    try:
        spec = SynthSpec(**kwargs)
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise CliConfigError(f"bad synth corpus config: {exc}") from exc
    return spec


def _load_dataset(config: dict, seed: int) -> tuple[training.PairedDataset, int, int]:
    """Returns (dataset, frame_dim, image_dim)."""
    corpus = config.get("corpus", {})
    if "path" in corpus:
        ds = synthcorpus.load_corpus(corpus["path"])
    else:
        synth = dict(corpus.get("synth", {}))
        synth.setdefault("seed", seed)
        ds = synthcorpus.generate(_synth_spec(synth))
    if not ds.utterances:
        raise CliConfigError("corpus has no utterances")
    return ds, int(ds.utterances[0].frames.shape[1]), int(ds.images.shape[1])


def _placement(d: dict) -> Placement:
    try:
        layers = tuple(int(i) for i in d["layers"])
        levels = tuple(str(s) for s in d["levels"])
        mode = str(d["mode"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CliConfigError(f"bad placement {d!r}: {exc}") from exc
    if len(layers) != len(levels) or not layers:
        raise CliConfigError(f"placement needs matching layer and level lists, got {d!r}")
    if any(i < 1 for i in layers) or list(layers) != sorted(set(layers)):
        raise CliConfigError(f"placement layers must be increasing 1-based indices, got {layers}")
    ranks = [_LEVEL_ORDER.get(lv) for lv in levels]
    if any(r is None for r in ranks):
        raise CliConfigError(f"unknown level in placement {levels!r}")
    if ranks != sorted(ranks):
        raise CliConfigError(f"hierarchical placements must list levels bottom-up, got {levels!r}")
    return Placement(layers=layers, levels=levels, mode=mode)


def _encoder_config(config: dict, image_in_dim: int, placement: Placement | None) -> EncoderConfig:
    enc = config.get("encoder", {})
    n_layers = int(enc.get("n_layers", 5))
    hidden = int(enc.get("hidden_dim", 32))
    specs = [LayerSpec(kind="vanilla", hidden_dim=hidden) for _ in range(n_layers)]
    if placement is not None:
        for idx, level in zip(placement.layers, placement.levels):
            if idx > n_layers:
                raise CliConfigError(f"placement layer {idx} exceeds n_layers {n_layers}")
            specs[idx - 1] = LayerSpec(kind="packager", hidden_dim=hidden,
                                       level=level, mode=placement.mode)
    cfg = EncoderConfig(
        conv=ConvSpec(filters=int(enc.get("conv_filters", 16)),
                      width=int(enc.get("conv_width", 6)),
                      stride=int(enc.get("conv_stride", 1))),
        layers=tuple(specs),
        attention_dim=int(enc.get("attention_dim", 32)),
        embed_dim=int(enc.get("embed_dim", hidden)),
        image_in_dim=image_in_dim,
    )
    try:
        validate_config(cfg)
    except ValueError as exc:
        raise CliConfigError(f"bad encoder config: {exc}") from exc
    return cfg


def _train_config(config: dict, seed: int) -> TrainConfig:
    t = config.get("train", {})
    try:
        return TrainConfig(
            margin_alpha=float(t.get("margin_alpha", 0.2)),
            lr=float(t.get("lr", 0.002)),
            batch_size=int(t.get("batch_size", 16)),
            epochs=int(t.get("epochs", 25)),
            seed=seed,
            eval_every=int(t.get("eval_every", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise CliConfigError(f"bad train config: {exc}") from exc


def _grid_cells(config: dict) -> list[Cell]:
    grid = config.get("grid", {})
    sources = tuple(grid.get("boundary_sources", ("TRUE", "RANDOM")))
    for s in sources:
        if s not in training.BOUNDARY_SOURCES:
            raise CliConfigError(f"unknown boundary source {s!r}")
    placements = [_placement(p) for p in grid.get("placements", [])]
    sweep = grid.get("sweep")
    if sweep:
        for layer in sweep.get("layers", []):
            for level in sweep.get("levels", []):
                for mode in sweep.get("modes", ["KEEP"]):
                    placements.append(_placement(
                        {"layers": [layer], "levels": [level], "mode": mode}))
    cells: list[Cell] = []
    if grid.get("include_baseline", True):
        cells.append(Cell(index=0, name="baseline", placement=None, source="TRUE"))
    for p in placements:
        # Shuffled tiers break nesting, so hierarchical placements only get
        # the RANDOM condition when a config asks for it explicitly.
        cell_sources = sources if len(p.levels) == 1 else ("TRUE",)
        explicit = grid.get("hierarchical_sources")
        if len(p.levels) > 1 and explicit:
            cell_sources = tuple(explicit)
        for source in cell_sources:
            rows, cols = p.key()
            name = f"{rows}_{cols}_{p.mode}_{source}"
            cells.append(Cell(index=len(cells), name=name, placement=p, source=source))
    if not cells:
        raise CliConfigError("grid has no cells")
    return cells


def _cell_seed(grid_seed: int, cell_index: int, stream: int) -> int:
    return int(np.random.SeedSequence([grid_seed, cell_index, stream]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# running cells


def _run_cell(config: dict, ds, frame_dim: int, image_dim: int, cell: Cell,
              grid_seed: int, outdir: Path | None) -> CellResult:
    enc_cfg = _encoder_config(config, image_dim, cell.placement)
    tc = _train_config(config, seed=_cell_seed(grid_seed, cell.index, 1))
    params = init_params(enc_cfg, frame_dim, seed=_cell_seed(grid_seed, cell.index, 0))
    run_ds = training.attach_random_tiers(ds, tc.seed) if cell.source == "RANDOM" else ds
    result = training.train(params, enc_cfg, run_ds, tc, boundary_source=cell.source)
    report = evaluation.evaluate_retrieval(result.params, enc_cfg, run_ds, "test",
                                           boundary_source=cell.source,
                                           condition_label=cell.name)
    if outdir is not None:
        cell_dir = outdir / "cells" / cell.name
        cell_dir.mkdir(parents=True, exist_ok=True)
        save_model(cell_dir / "model.npz", enc_cfg, result.params)
        (cell_dir / "report.json").write_text(json.dumps({
            "condition": cell.name,
            "n_queries": report.n_queries,
            "recalls": {str(k): v for k, v in sorted(report.recalls.items())},
            "hits_at_1": report.hits_at[1].tolist(),
            "best_epoch": result.best_epoch,
        }, indent=2, sort_keys=True), encoding="utf-8")
        (cell_dir / "history.json").write_text(json.dumps(
            [{"epoch": r.epoch, "train_loss": r.train_loss, "val_r1": r.val_r1}
             for r in result.history], indent=2), encoding="utf-8")
    return CellResult(cell=cell, recalls=report.recalls, hits_at_1=report.hits_at[1],
                      n_queries=report.n_queries, best_epoch=result.best_epoch)


def _run_cell_job(args) -> CellResult:
    config, ds, frame_dim, image_dim, cell, grid_seed, outdir = args
    try:
        return _run_cell(config, ds, frame_dim, image_dim, cell, grid_seed, outdir)
    except Exception:  # cell failures are recorded, the grid continues
        return CellResult(cell=cell, error=traceback.format_exc(limit=4))


def run_grid(config: dict, seed: int, outdir: Path | None, workers: int = 1) -> list[CellResult]:
    """Train every grid cell and collect retrieval results (order-stable)."""
    ds, frame_dim, image_dim = _load_dataset(config, seed)
    cells = _grid_cells(config)
    jobs = [(config, ds, frame_dim, image_dim, cell, seed, outdir) for cell in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_job, jobs))
    else:
        results = [_run_cell_job(job) for job in jobs]
    results.sort(key=lambda r: r.cell.index)
    return results


# ---------------------------------------------------------------------------
# tables


def _significance(a: CellResult, b: CellResult) -> float:
    """p-value of the two-proportion test between two cells' R@1 hits."""
    test = evaluation.z_test(int(a.hits_at_1.sum()), a.n_queries,
                             int(b.hits_at_1.sum()), b.n_queries)
    return test.p_value


def report_table(results: list[CellResult], alpha: float = 1e-2) -> str:
    """Fixed-width summary tables, one per (mode, source) condition.

    Cell entries show max-validation R@1 on the test set in percent.
    Markers: ``+``/``-`` statistically better/worse than the baseline,
    ``*`` TRUE and RANDOM differ for that placement, ``[..]`` best cell
    overall.  All tests are two-sided proportion Z-tests at ``alpha``.
    """
    ok = [r for r in results if r.error is None and r.recalls is not None]
    baseline = next((r for r in ok if r.cell.placement is None), None)
    scored = [r for r in ok if r.cell.placement is not None]
    lines: list[str] = []
    if baseline is not None:
        recs = " ".join(f"R@{k}={100 * v:.2f}" for k, v in sorted(baseline.recalls.items()))
        lines.append(f"baseline: {recs} (n={baseline.n_queries})")
        lines.append("")
    if not scored:
        return "\n".join(lines) if lines else "no results"

    best = max(scored, key=lambda r: (r.recalls[1], -r.cell.index))
    by_key = {(r.cell.placement.key(), r.cell.placement.mode, r.cell.source): r for r in scored}

    conditions = []
    for mode in ("KEEP", "ALL"):
        for source in ("TRUE", "RANDOM"):
            rs = [r for r in scored if r.cell.placement.mode == mode and r.cell.source == source]
            if rs:
                conditions.append((mode, source, rs))

    def col_order(col: str) -> tuple:
        parts = col.split("+")
        return (len(parts), tuple(_LEVEL_ORDER.get(p, 99) for p in parts), col)

    for mode, source, rs in conditions:
        rows = sorted({r.cell.placement.key()[0] for r in rs})
        cols = sorted({r.cell.placement.key()[1] for r in rs}, key=col_order)
        lines.append(f"== {mode} / {source} ==")
        width = max([12] + [len(c) + 2 for c in cols])
        header = "placement".ljust(12) + "".join(c.rjust(width) for c in cols)
        lines.append(header)
        for row in rows:
            entry_cells = []
            for col in cols:
                r = by_key.get(((row, col), mode, source))
                if r is None:
                    entry_cells.append("-".rjust(width))
                    continue
                text = f"{100 * r.recalls[1]:.2f}"
                if baseline is not None and _significance(r, baseline) < alpha:
                    text += "+" if r.recalls[1] > baseline.recalls[1] else "-"
                other = by_key.get(((row, col), mode, "RANDOM" if source == "TRUE" else "TRUE"))
                if other is not None and _significance(r, other) < alpha:
                    text += "*"
                if r is best:
                    text = f"[{text}]"
                entry_cells.append(text.rjust(width))
            lines.append(row.ljust(12) + "".join(entry_cells))
        lines.append("")
    failed = [r for r in results if r.error is not None]
    for r in failed:
        lines.append(f"FAILED {r.cell.name}: {r.error.strip().splitlines()[-1]}")
    legend = ("markers: + better than baseline, - worse than baseline (p < 1e-02); "
              "* TRUE vs RANDOM significant; [..] best cell")
    lines.append(legend)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# verbs


def _cmd_gen(args) -> int:
    config = _load_json(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    synth = dict(config.get("corpus", {}).get("synth", config.get("synth", {})))
    synth.setdefault("seed", seed)
    spec = _synth_spec(synth)
    ds = synthcorpus.generate(spec)
    out = Path(args.out)
    synthcorpus.write_corpus(ds, out, frame_hop_ms=spec.frame_hop_ms, inventory=spec.inventory)
    print(f"wrote {len(ds.utterances)} paired utterances, {ds.images.shape[0]} images to {out}")
    return 0


def _cmd_train(args) -> int:
    config = _load_json(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    cell_cfg = config.get("cell", {})
    placement = _placement(cell_cfg["placement"]) if cell_cfg.get("placement") else None
    source = cell_cfg.get("source", "TRUE")
    name = "baseline" if placement is None else \
        f"{placement.key()[0]}_{placement.key()[1]}_{placement.mode}_{source}"
    cell = Cell(index=0, name=name, placement=placement, source=source)
    ds, frame_dim, image_dim = _load_dataset(config, seed)
    outdir = Path(args.out) if args.out else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)
    result = _run_cell_job((config, ds, frame_dim, image_dim, cell, seed, outdir))
    if result.error:
        print(result.error, file=sys.stderr)
        return 1
    recs = " ".join(f"R@{k}={100 * v:.2f}" for k, v in sorted(result.recalls.items()))
    print(f"{cell.name}: {recs} (best epoch {result.best_epoch})")
    return 0


def _cmd_grid(args) -> int:
    config = _load_json(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    outdir = Path(args.out) if args.out else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)
    results = run_grid(config, seed, outdir, workers=args.workers)
    table = report_table(results)
    print(table, end="")
    if outdir:
        (outdir / "summary.txt").write_text(table, encoding="utf-8")
        summary = {
            r.cell.name: ({"error": r.error} if r.error else
                          {"recalls": {str(k): v for k, v in sorted(r.recalls.items())},
                           "best_epoch": r.best_epoch, "n_queries": r.n_queries})
            for r in results
        }
        (outdir / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    return 1 if any(r.error for r in results) else 0


def _cmd_eval(args) -> int:
    config = _load_json(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    if "model" not in config:
        raise CliConfigError("eval config needs a 'model' path")
    enc_cfg, params = load_model(config["model"])
    ds, _, _ = _load_dataset(config, seed)
    source = config.get("source", "TRUE")
    if source == "RANDOM":
        ds = training.attach_random_tiers(ds, config.get("random_seed", seed))
    split = config.get("split", "test")
    report = evaluation.evaluate_retrieval(params, enc_cfg, ds, split, boundary_source=source)
    recs = " ".join(f"R@{k}={100 * v:.2f}" for k, v in sorted(report.recalls.items()))
    print(f"{split}: {recs} (n={report.n_queries})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps({
            "split": split,
            "n_queries": report.n_queries,
            "recalls": {str(k): v for k, v in sorted(report.recalls.items())},
            "hits_at_1": report.hits_at[1].tolist(),
        }, indent=2, sort_keys=True), encoding="utf-8")
    return 0


def _cmd_export_emb(args) -> int:
    config = _load_json(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    if "model" not in config:
        raise CliConfigError("export-emb config needs a 'model' path")
    enc_cfg, params = load_model(config["model"])
    ds, _, _ = _load_dataset(config, seed)
    source = config.get("source", "TRUE")
    if source == "RANDOM":
        ds = training.attach_random_tiers(ds, config.get("random_seed", seed))
    out = Path(args.out) if args.out else Path("embeddings.txt")
    if out.is_dir():
        out = out / "embeddings.txt"
    evaluation.export_embeddings(params, enc_cfg, ds, out, boundary_source=source)
    print(f"wrote embeddings to {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segpack", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, needs_config=True, needs_out=False):
        p.add_argument("--config", required=needs_config, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", required=needs_out, help="output directory")
        p.add_argument("--workers", type=int, default=1, help="parallel cells (grid only)")

    common(sub.add_parser("gen", help="synthesize a corpus"), needs_config=False, needs_out=True)
    common(sub.add_parser("train", help="train a single cell"))
    common(sub.add_parser("grid", help="run the experiment grid"))
    common(sub.add_parser("eval", help="report retrieval metrics for a saved model"))
    common(sub.add_parser("export-emb", help="export embeddings for a saved model"))
    return parser


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "grid": _cmd_grid,
    "eval": _cmd_eval,
    "export-emb": _cmd_export_emb,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except CliConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
