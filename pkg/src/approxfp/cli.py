"""``approxfp`` command line.

Every command writes CSV or JSON data only.  JSON outputs embed a run
manifest; CSV and binary outputs get a ``<out>.manifest.json`` sidecar.  The
manifest records the command, its content-affecting parameters, seeds, input
digests and tool version, and never a timestamp, so equal manifests mean
byte-identical outputs.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

import click

from . import __version__, booth, hardware, metrics

DATA_ENV = "APPROXFP_DATA"
TEST_BATCH = "test_batch.bin"
TRAIN_BATCHES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))


class OutputError(click.ClickException):
    exit_code = 3


# --------------------------------------------------------------------------
# manifests and writers


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def make_manifest(command: str, params: dict, seeds: dict | None = None, inputs: list | None = None) -> dict:
    return {
        "command": command,
        "parameters": {k: params[k] for k in sorted(params)},
        "seeds": seeds or {},
        "inputs": _digests(inputs or []),
        "version": __version__,
    }


def _digests(paths) -> dict:
    # keyed by file name so the manifest does not depend on where data lives
    paths = [Path(p) for p in paths]
    names = [p.name for p in paths]
    return {(p.name if names.count(p.name) == 1 else str(p)): sha256_file(p) for p in paths}


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _check_rows(columns, rows):
    for i, r in enumerate(rows):
        if len(r) != len(columns):
            raise OutputError(f"row {i} has {len(r)} fields, expected {len(columns)}")
        for v in r:
            if isinstance(v, float) and not math.isfinite(v):
                raise OutputError(f"row {i} holds a non-finite value")


def emit_table(out, fmt: str, manifest: dict, columns, rows, json_rows=None, extra: dict | None = None) -> None:
    """Validate, then write a table as CSV (+ sidecar manifest) or JSON."""
    _check_rows(columns, rows)
    if fmt == "csv":
        text = _csv_text(columns, rows)
        _write(out, text, manifest)
    else:
        records = json_rows if json_rows is not None else [dict(zip(columns, r)) for r in rows]
        doc = {"manifest": manifest, "rows": records}
        doc.update(extra or {})
        try:
            text = _dump_json(doc)
        except ValueError as exc:
            raise OutputError(f"output not serialisable: {exc}") from None
        _write(out, text, None)


def _write(out, text: str, sidecar: dict | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.write_text(text)
    if sidecar is not None:
        Path(str(path) + ".manifest.json").write_text(_dump_json(sidecar))


def _fmt(x: float, digits: int) -> str:
    return f"{x:.{digits}f}"


# --------------------------------------------------------------------------
# data resolution


def resolve_data(path: str | None, split: str) -> list[Path]:
    """CIFAR-10 batch files for ``split`` ("test" or "train").

    ``path`` may be a batch file or a directory holding the standard batch
    names; without it the directory named by ``$APPROXFP_DATA`` is used.
    """
    if path is None:
        path = os.environ.get(DATA_ENV)
        if not path:
            raise click.UsageError(f"no dataset given: pass --data or set ${DATA_ENV}")
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise click.UsageError(f"dataset path {p} does not exist")
    names = [TEST_BATCH] if split == "test" else list(TRAIN_BATCHES)
    files = [p / n for n in names if (p / n).is_file()]
    if not files:
        raise click.UsageError(f"{p} holds none of {names}")
    return files


def _load_data(files, n: int | None):
    from . import cnn

    data = cnn.load_cifar10(files)
    if n is not None:
        if n > len(data):
            raise click.UsageError(f"asked for {n} images but the dataset has {len(data)}")
        data = data[:n]
    return data


def _config_names(configs) -> list[str]:
    try:
        return [booth.get_config(c).name for c in configs]
    except KeyError as exc:
        raise click.BadParameter(exc.args[0], param_hint="--config") from None


# --------------------------------------------------------------------------
# commands

_format = click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
_out = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output file (default stdout).")


@click.group()
@click.version_option(__version__, prog_name="approxfp")
def main():
    """Approximate FP32 multiplier toolkit."""


@main.command()
@click.option("--config", "configs", multiple=True, help="Config id (repeatable).")
@click.option("--all", "all_", is_flag=True, help="Exact plus the eight approximate configs.")
@click.option("--n", default=400_000, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=1, show_default=True)
@click.option("--tau", default=1.0, show_default=True, type=click.FloatRange(min=0.0))
@_out
@_format
def characterize(configs, all_, n, seed, tau, out, fmt):
    """Error metrics against the exact multiplier."""
    names = (list(booth.CONFIG_IDS) if all_ else []) + _config_names(configs)
    if not names:
        raise click.UsageError("pass --config or --all")
    reports = [metrics.characterize(c, n, seed=seed, tau=tau) for c in names]
    rows = [metrics.table_row(r) for r in reports]
    manifest = make_manifest("characterize", {"configs": names, "n": n, "tau": tau, "format": fmt}, {"operands": seed})
    emit_table(out, fmt, manifest, list(metrics.TABLE_COLUMNS), rows, [r.as_dict() for r in reports])


@main.command()
@click.option("--table", type=click.Path(exists=True, dir_okay=False), default=None, help="Override cost CSV.")
@_out
@_format
def costs(table, out, fmt):
    """Hardware cost table with the PDP benefit of each approximate config."""
    tab = hardware.CostTable.load(table)
    columns = ["config", "area_um2", "power_uw", "delay_ps", "pdp_pj", "pdp_benefit_pct"]
    rows, recs = [], []
    for name, c in tab.rows.items():
        benefit = None if name == "exact" else tab.pdp_benefit(name)
        rows.append(
            [name, _fmt(c.area, 2), _fmt(c.power, 3), f"{c.delay:g}", _fmt(c.pdp, 3), "" if benefit is None else _fmt(benefit, 2)]
        )
        recs.append(
            {"config": name, "area_um2": c.area, "power_uw": c.power, "delay_ps": c.delay, "pdp_pj": c.pdp, "pdp_benefit_pct": benefit}
        )
    manifest = make_manifest("costs", {"format": fmt}, inputs=[table] if table else [])
    emit_table(out, fmt, manifest, columns, rows, recs)


@main.command("dump-placement")
@click.option("--config", "configs", multiple=True, help="Config id (repeatable); default all.")
@_out
@_format
def dump_placement(configs, out, fmt):
    """Compressor kind of every reduction-tree cell."""
    names = _config_names(configs) or list(booth.CONFIG_IDS)
    net = booth.build_netlist(booth.WIDTH)
    columns = ["config", "cell", "stage", "column", "kind"]
    rows = []
    for name in names:
        kinds = booth.placement(booth.get_config(name))
        for idx, (k, s, c) in enumerate(zip(kinds, net.cell_stage, net.cell_col)):
            rows.append([name, idx, int(s), int(c), booth.CELL_NAMES[k]])
    manifest = make_manifest("dump-placement", {"configs": names, "format": fmt})
    emit_table(out, fmt, manifest, columns, rows)


def _sequence_options(f):
    f = click.option("--seq", "seq_path", type=click.Path(exists=True, dir_okay=False), help="Sequence JSON file.")(f)
    f = click.option("--config", "configs", multiple=True, help="Uniform sequence of this config (repeatable).")(f)
    f = click.option("--uniform-all", is_flag=True, help="Every uniform config: exact plus eight approximate.")(f)
    return f


_weights = click.option("--weights", type=click.Path(exists=True, dir_okay=False), required=True)
_data = click.option("--data", type=click.Path(exists=True), default=None, help=f"CIFAR-10 batch file or directory (default ${DATA_ENV}).")
_workers = click.option("--workers", default=1, show_default=True, type=click.IntRange(min=1))


@main.command()
@_weights
@_data
@_sequence_options
@click.option("--n", default=2000, show_default=True, type=click.IntRange(min=1))
@click.option("--area-mode", type=click.Choice(hardware.AREA_MODES), default=hardware.AREA_DISTINCT, show_default=True)
@_workers
@_out
@_format
def evaluate(weights, data, seq_path, configs, uniform_all, n, area_mode, workers, out, fmt):
    """Top-1 accuracy and hardware cost of multiplier sequences."""
    from . import cnn

    seqs = []
    if seq_path:
        seqs.append((Path(seq_path).name, cnn.AssignmentSequence.load(seq_path)))
    names = list(booth.CONFIG_IDS) if uniform_all else _config_names(configs)
    seqs += [(name, cnn.AssignmentSequence.uniform(name)) for name in names]
    if not seqs:
        raise click.UsageError("pass --seq, --config or --uniform-all")
    files = resolve_data(data, "test")
    ds = _load_data(files, n)
    net = cnn.load_weights(weights)
    columns = ["sequence", "pdp_pj", "area_um2", "accuracy_pct", "n_images"]
    rows, recs = [], []
    for label, seq in seqs:
        pdp, area = hardware.aggregate_cost(seq, area_mode)
        acc = cnn.evaluate_accuracy(ds, net, seq, workers=workers)
        rows.append([label, _fmt(pdp, 3), _fmt(area, 2), _fmt(acc, 2), len(ds)])
        recs.append({"sequence": label, "pdp_pj": pdp, "area_um2": area, "accuracy_pct": acc, "n_images": len(ds)})
    inputs = [weights, *files] + ([seq_path] if seq_path else [])
    manifest = make_manifest("evaluate", {"sequences": [s for s, _ in seqs], "n": n, "area_mode": area_mode, "format": fmt}, inputs=inputs)
    emit_table(out, fmt, manifest, columns, rows, recs)


@main.command()
@click.option("--k", default=3, show_default=True, type=click.IntRange(2, 8))
@click.option("--pop", default=50, show_default=True, type=click.IntRange(min=2))
@click.option("--gens", default=40, show_default=True, type=click.IntRange(min=0))
@click.option("--crossover", default=0.9, show_default=True, type=click.FloatRange(0, 1))
@click.option("--mutation", default=None, type=click.FloatRange(0, 1), help="Per-slot rate [default: 2/198].")
@click.option("--seed", default=0, show_default=True)
@click.option("--hardware-only", is_flag=True, help="Optimise (area, pdp) only; no network needed.")
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), default=None)
@_data
@click.option("--n-eval", default=500, show_default=True, type=click.IntRange(min=1), help="Images per fitness evaluation.")
@click.option("--n-final", default=2000, show_default=True, type=click.IntRange(min=0), help="Images for re-scoring the front (0 skips).")
@click.option("--area-mode", type=click.Choice(hardware.AREA_MODES), default=hardware.AREA_DISTINCT, show_default=True)
@_workers
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def optimize(k, pop, gens, crossover, mutation, seed, hardware_only, weights, data, n_eval, n_final, area_mode, workers, out):
    """NSGA-II over sequences of the top-K configs; writes the final front as JSON."""
    from . import cnn, nsga2

    params = nsga2.OptimizerParams(
        k=k,
        population=pop,
        generations=gens,
        crossover_rate=crossover,
        mutation_rate=2 / cnn.N_SLOTS if mutation is None else mutation,
        seed=seed,
        eval_subset=n_eval,
        workers=workers,
    )
    inputs: list = []
    extra: dict = {"types": list(params.types)}
    if hardware_only:
        fit = nsga2.hardware_fitness(area_mode=area_mode)
        names = ("area", "pdp")
    else:
        if weights is None:
            raise click.UsageError("--weights is required unless --hardware-only")
        files = resolve_data(data, "test")
        net = cnn.load_weights(weights)
        full = _load_data(files, None)
        sub = full[: min(n_eval, len(full))]
        baseline = cnn.evaluate_accuracy(sub, net, cnn.AssignmentSequence.uniform("exact"), workers=workers)
        fit = nsga2.full_fitness(lambda s: cnn.evaluate_accuracy(sub, net, s, workers=workers), baseline, area_mode=area_mode)
        names = ("area", "pdp", "accuracy_loss")
        inputs = [weights, *files]
        extra["baseline_accuracy_eval"] = baseline
    front = nsga2.evolve(params, fit)
    members = [m.to_dict(names) for m in front.members]
    if not hardware_only:
        pick = nsga2.pick_candidate(front.members)
        extra["candidate"] = front.members.index(pick)
        if n_final:
            final = full[: min(n_final, len(full))]
            base_final = cnn.evaluate_accuracy(final, net, cnn.AssignmentSequence.uniform("exact"), workers=workers)
            extra["baseline_accuracy_final"] = base_final
            for m, rec in zip(front.members, members):
                rec["accuracy_final"] = cnn.evaluate_accuracy(final, net, m.sequence, workers=workers)
    extra["n_evaluations"] = front.n_evaluations
    _validate_front(members, names)
    manifest = make_manifest(
        "optimize",
        {
            "k": k, "pop": pop, "gens": gens, "crossover": crossover, "mutation": params.mutation_rate,
            "hardware_only": hardware_only, "n_eval": n_eval, "n_final": n_final, "area_mode": area_mode,
        },
        {"evolution": seed},
        inputs,
    )
    doc = {"manifest": manifest, "front": members, **extra}
    _write(out, _dump_json(doc), None)


def _validate_front(members, names):
    if not members:
        raise OutputError("empty front")
    for m in members:
        if len(m["slots"]) != 198 or not all(isinstance(s, str) for s in m["slots"]):
            raise OutputError("front member with malformed slots")
        for n in names:
            if not isinstance(m.get(n), float) or not math.isfinite(m[n]):
                raise OutputError(f"front member with bad {n!r}")


@main.command()
@click.option("--seq", "seq_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Sequence JSON file.")
@click.option("--k", default=None, type=click.IntRange(1, 8), help="Instead of --seq: top-K types spread evenly over the slots.")
@click.option("--n", "n_variants", default=10, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True)
@_weights
@_data
@click.option("--n-images", default=2000, show_default=True, type=click.IntRange(min=1))
@_workers
@_out
@_format
def permute(seq_path, k, n_variants, seed, weights, data, n_images, workers, out, fmt):
    """Accuracy of random slot permutations of one sequence."""
    from . import cnn, nsga2

    if (seq_path is None) == (k is None):
        raise click.UsageError("pass exactly one of --seq or --k")
    seq = cnn.AssignmentSequence.load(seq_path) if seq_path else balanced_sequence(nsga2.allowed_types(k))
    files = resolve_data(data, "test")
    ds = _load_data(files, n_images)
    net = cnn.load_weights(weights)
    study = nsga2.permute_study(seq, n_variants, seed, lambda s: cnn.evaluate_accuracy(ds, net, s, workers=workers))
    pdp, area = hardware.aggregate_cost(seq)
    exact_acc = cnn.evaluate_accuracy(ds, net, cnn.AssignmentSequence.uniform("exact"), workers=workers)
    columns = ["variant", "accuracy_pct", "pdp_pj", "area_um2", "slots"]
    rows = [[i, _fmt(a, 2), _fmt(pdp, 3), _fmt(area, 2), " ".join(v.slots)] for i, (v, a) in enumerate(study.rows())]
    recs = [
        {"variant": i, "accuracy_pct": a, "pdp_pj": pdp, "area_um2": area, "slots": list(v.slots)}
        for i, (v, a) in enumerate(study.rows())
    ]
    manifest = make_manifest(
        "permute",
        {"source": list(seq.slots), "n": n_variants, "n_images": len(ds), "format": fmt},
        {"permutation": seed},
        [weights, *files] + ([seq_path] if seq_path else []),
    )
    extra = {"max_accuracy_pct": study.max_accuracy, "exact_accuracy_pct": exact_acc}
    emit_table(out, fmt, manifest, columns, rows, recs, extra)


def balanced_sequence(types) -> "cnn.AssignmentSequence":  # noqa: F821
    """Types assigned round-robin over the slots (equal shares, +-1)."""
    from . import cnn

    return cnn.AssignmentSequence(tuple(types[i % len(types)] for i in range(cnn.N_SLOTS)))


@main.command()
@click.option("--data", type=click.Path(exists=True), default=None, help=f"Training batches (default ${DATA_ENV}).")
@click.option("--n", default=None, type=click.IntRange(min=1), help="Use the first N training images.")
@click.option("--epochs", default=25, show_default=True, type=click.IntRange(min=1))
@click.option("--lr", default=0.02, show_default=True)
@click.option("--batch-size", default=64, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Weight file to write.")
def train(data, n, epochs, lr, batch_size, seed, out):
    """Train the reference network (needs torch) and save its weights."""
    from . import cnn
    from .train import TrainParams, train_reference

    files = resolve_data(data, "train")
    ds = _load_data(files, n)
    params = TrainParams(epochs=epochs, lr=lr, batch_size=batch_size, seed=seed)
    res = train_reference(ds, params)
    cnn.save_weights(res.net, out)
    manifest = make_manifest(
        "train",
        {"n": len(ds), "epochs": epochs, "lr": lr, "batch_size": batch_size},
        {"training": seed},
        files,
    )
    manifest["result"] = {"initial_loss": res.initial_loss, "epoch_losses": res.epoch_losses}
    Path(out + ".manifest.json").write_text(_dump_json(manifest))


@main.command("make-synthetic")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--n-train", default=10_000, show_default=True, type=click.IntRange(min=1))
@click.option("--n-test", default=2000, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True)
def make_synthetic(out_dir, n_train, n_test, seed):
    """Write a CIFAR-format stand-in dataset (train and test batches)."""
    from . import cnn, synthetic

    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    cnn.write_cifar10(synthetic.make_dataset(n_train, seed), d / TRAIN_BATCHES[0])
    cnn.write_cifar10(synthetic.make_dataset(n_test, seed + 1), d / TEST_BATCH)
    manifest = make_manifest("make-synthetic", {"n_train": n_train, "n_test": n_test}, {"train": seed, "test": seed + 1})
    (d / "manifest.json").write_text(_dump_json(manifest))


if __name__ == "__main__":
    main()
