"""Command-line entry point: ``xmcnn gen-synth|train|eval|grad-check|embed``.

Exit codes: 0 success, 1 validation or check failure, 2 usage error,
3 numerical divergence. Every command accepts ``--config FILE`` holding
``key = value`` lines named after its long options; flags given on the
command line take precedence.
"""

import csv
import json
import logging
import sys

import click

from . import gradcheck
from .data import generate_synthetic, load_dataset, load_model, save_dataset, save_model
from .errors import DivergenceError, XMCNNError
from .evaluation import average_summaries, k_fold, summarize_all
from .objective import Hyperparams
from .relevance import read_triples, relevance_from_labels, relevance_from_triples
from .solver import SolverConfig, TrainingData, embed_samples, solve, write_trace

EXIT_CHECK_FAILED = 1
EXIT_DIVERGED = 3


def read_config(path):
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise click.BadParameter(f"{path}:{lineno}: expected 'key = value'", param_hint="--config")
            key, value = (s.strip() for s in line.split("=", 1))
            entries[key.replace("-", "_")] = value
    return entries


def _load_config(ctx, param, path):
    if path is None:
        return None
    entries = read_config(path)
    known = {p.name for p in ctx.command.params if p.name != "config"}
    unknown = sorted(set(entries) - known)
    if unknown:
        raise click.BadParameter(f"unknown keys {', '.join(unknown)}", ctx=ctx, param=param)
    multi = {p.name for p in ctx.command.params if getattr(p, "multiple", False)}
    ctx.default_map = {
        k: [s.strip() for s in v.split(",")] if k in multi else v for k, v in entries.items()
    }
    return path


config_option = click.option(
    "--config", type=click.Path(exists=True, dir_okay=False), is_eager=True,
    expose_value=False, callback=_load_config, help="key = value file with option defaults.",
)


def _int_list(ctx, param, value):
    if value is None or isinstance(value, (list, tuple)):
        return value
    try:
        out = [int(s) for s in str(value).split(",") if s.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from None
    if not out:
        raise click.BadParameter("empty list")
    return out


def training_options(f):
    opts = [
        click.option("--pos-class", "pos_class", type=int, multiple=True,
                     help="Class id labelled +1 (repeatable); others are -1."),
        click.option("--lambda1", type=float, default=0.1, show_default=True),
        click.option("--lambda2", type=float, default=0.01, show_default=True),
        click.option("--beta", type=float, default=1.0, show_default=True),
        click.option("--u", type=int, default=8, show_default=True, help="Filters per modality."),
        click.option("--h", default="2", show_default=True, callback=_int_list,
                     help="Window size, or one per modality as a comma list."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--max-outer", type=int, default=200, show_default=True),
        click.option("--max-inner", type=int, default=50, show_default=True),
        click.option("--tol-lagrangian", type=float, default=1e-6, show_default=True),
        click.option("--tol-residual", type=float, default=1e-4, show_default=True),
        click.option("--init-scale", type=float, default=0.1, show_default=True),
        click.option("--threads", type=int, default=1, show_default=True),
        click.option("--relevance", type=click.Path(exists=True, dir_okay=False),
                     help="Relevance triples file; default derives S from class ids."),
        click.option("--clamp-negative-relevance", is_flag=True, default=False,
                     help="Zero every -1 relevance entry."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _hyperparams(kw, modalities):
    hs = kw["h"]
    if len(hs) == 1:
        h = hs[0]
    elif len(hs) == len(modalities):
        h = dict(zip(modalities, hs))
    else:
        raise click.BadParameter(f"got {len(hs)} window sizes for {len(modalities)} modalities",
                                 param_hint="--h")
    return Hyperparams(kw["lambda1"], kw["lambda2"], kw["beta"], kw["u"], h,
                       kw["clamp_negative_relevance"])


def _solver_config(kw):
    return SolverConfig(kw["max_outer"], kw["max_inner"], kw["tol_lagrangian"], kw["tol_residual"],
                        kw["seed"], kw["init_scale"], kw["threads"])


def _labelled(dataset, pos_class):
    if pos_class:
        return dataset.with_binary_labels(pos_class)
    if any(s.label is None for s in dataset.samples):
        raise click.UsageError("dataset has unlabelled records; pass --pos-class")
    return dataset


def _load(path):
    try:
        return load_dataset(path)
    except XMCNNError as exc:
        raise click.ClickException(str(exc)) from None


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
@click.version_option(package_name="artifact")
def main(verbose):
    """Cross-modal convolutional embeddings trained with ADMM."""
    level = logging.WARNING - 10 * verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")


@main.command("gen-synth")
@config_option
@click.option("--modalities", type=int, default=2, show_default=True)
@click.option("--classes", type=int, default=2, show_default=True)
@click.option("--per-class", type=int, default=10, show_default=True,
              help="Samples per class per modality.")
@click.option("--dims", default=None, callback=_int_list,
              help="Instance dimension per modality (comma list; default 4,6,...).")
@click.option("--seq-len", default="3,8", show_default=True, callback=_int_list,
              help="Min,max sequence length.")
@click.option("--separation", type=float, default=4.0, show_default=True)
@click.option("--noise", type=float, default=1.0, show_default=True)
@click.option("--pos-class", "pos_class", type=int, multiple=True, default=(1,), show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True)
def gen_synth(modalities, classes, per_class, dims, seq_len, separation, noise, pos_class, seed, out):
    """Write a synthetic multi-modality dataset."""
    if dims is None:
        dims = [4 + 2 * j for j in range(modalities)]
    if len(seq_len) != 2:
        raise click.BadParameter("expected min,max", param_hint="--seq-len")
    try:
        ds = generate_synthetic(modalities, classes, per_class, dims, tuple(seq_len), separation,
                                noise, seed, pos_class)
    except XMCNNError as exc:
        raise click.UsageError(str(exc)) from None
    save_dataset(ds, out)
    click.echo(f"wrote {len(ds)} records to {out}")


@main.command()
@config_option
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), required=True)
@training_options
@click.option("--trace", type=click.Path(dir_okay=False, writable=True),
              help="Write iteration, Lagrangian and residual per outer iteration.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True)
def train(data_path, trace, out, **kw):
    """Train filter banks and classifier on a dataset."""
    dataset = _labelled(_load(data_path), kw["pos_class"])
    hp = _hyperparams(kw, dataset.modalities)
    config = _solver_config(kw)
    data = TrainingData(dataset.samples, hp, dataset.modalities)
    try:
        if kw["relevance"]:
            S = relevance_from_triples(read_triples(kw["relevance"]), len(dataset))
        else:
            S = relevance_from_labels(dataset.classes)
        params, report = solve(data, S, hp, config)
    except DivergenceError as exc:
        path = trace or f"{out}.diverged.trace"
        write_trace(path, exc.trace)
        click.echo(f"error: solver diverged: {exc}; trace written to {path}", err=True)
        sys.exit(EXIT_DIVERGED)
    except XMCNNError as exc:
        raise click.ClickException(str(exc)) from None
    save_model(params, hp, out, seed=kw["seed"], iterations=report.iterations)
    if trace:
        report.write_trace(trace)
    lag, res = report.trace[-1]
    click.echo(f"iterations {report.iterations} ({report.reason})")
    click.echo(f"lagrangian {lag!r}")
    click.echo(f"residual {res!r}")


def _report_lines(summaries, k_list, standard, prefix=""):
    lines = []
    for name, s in summaries.items():
        p = f"{prefix}{name}."
        lines.append(f"{p}queries={s.n_queries}")
        lines.append(f"{p}undefined_queries={s.n_undefined}")
        for k in k_list:
            if k in s.precision:
                lines.append(f"{p}prec@{k}={s.precision[k]!r}")
        lines.append(f"{p}map={(s.map_standard if standard else s.map_database)!r}")
        lines.append(f"{p}map_database={s.map_database!r}")
        lines.append(f"{p}map_standard={s.map_standard!r}")
        lines.append(f"{p}beprp={s.beprp!r}")
    return lines


def _write_per_query(path, pooled_by_run, k_list):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "direction", "query", "n_relevant"]
                        + [f"prec@{k}" for k in k_list] + ["map_database", "map_standard", "beprp"])
        for run, pooled in pooled_by_run:
            for direction, results in pooled.items():
                for r in results:
                    writer.writerow([run, direction, r.query, r.n_relevant]
                                    + [repr(r.precision.get(k, float("nan"))) for k in k_list]
                                    + [repr(r.map_database), repr(r.map_standard),
                                       "" if r.beprp is None else repr(r.beprp)])


@main.command("eval")
@config_option
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              help="Evaluate a fixed model instead of training one per fold.")
@training_options
@click.option("--k-list", default="1,5,10", show_default=True, callback=_int_list)
@click.option("--folds", type=int, default=10, show_default=True)
@click.option("--map-standard", is_flag=True, default=False,
              help="Report the relevant-count normalised mAP under the 'map' key.")
@click.option("--one-vs-rest", is_flag=True, default=False,
              help="Train one model per class as the positive class.")
@click.option("--per-query-csv", type=click.Path(dir_okay=False, writable=True))
@click.option("--out", type=click.Path(dir_okay=False, writable=True), help="Report file (default stdout).")
def eval_cmd(data_path, model_path, k_list, folds, map_standard, one_vs_rest, per_query_csv, out, **kw):
    """Cross-modal retrieval with k-fold cross-validation."""
    dataset = _load(data_path)
    if any(s.cls is None for s in dataset.samples):
        raise click.ClickException("every record needs a class id to judge relevance")
    hp = _hyperparams(kw, dataset.modalities)
    config = _solver_config(kw)
    model = None
    if model_path:
        try:
            model, hp, _ = load_model(model_path)
        except XMCNNError as exc:
            raise click.ClickException(str(exc)) from None
    if one_vs_rest and not model:
        runs = [(f"class{c}.", (c,)) for c in sorted(set(dataset.classes.tolist()))]
    else:
        if not model and not kw["pos_class"] and any(s.label is None for s in dataset.samples):
            raise click.UsageError("pass --pos-class, --one-vs-rest or --model")
        runs = [("", tuple(kw["pos_class"]) or None)]
    lines, pooled_by_run, per_run = [], [], []
    try:
        for prefix, pos in runs:
            pooled = k_fold(dataset, hp, config, pos, k_list, folds, kw["seed"], model)
            summaries = summarize_all(pooled)
            per_run.append(summaries["mean"])
            lines += _report_lines(summaries, k_list, map_standard, prefix)
            pooled_by_run.append((prefix.rstrip(".") or "all", pooled))
    except DivergenceError as exc:
        click.echo(f"error: solver diverged during evaluation: {exc}", err=True)
        sys.exit(EXIT_DIVERGED)
    except XMCNNError as exc:
        raise click.ClickException(str(exc)) from None
    if len(per_run) > 1:
        avg = {"mean": average_summaries("mean", per_run)}
        lines += _report_lines(avg, k_list, map_standard, "ovr.")
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)
    if per_query_csv:
        _write_per_query(per_query_csv, pooled_by_run, k_list)


@main.command("grad-check")
@config_option
@click.option("--trials", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tol", type=float, default=1e-5, show_default=True)
@click.option("--step", type=float, default=1e-5, show_default=True)
@click.option("--inject-sign-error", is_flag=True, hidden=True)
def grad_check(trials, seed, tol, step, inject_sign_error):
    """Compare analytic gradients with central finite differences."""
    results = gradcheck.run(trials, seed, step, inject_sign_error)
    failed = [r for r in results if not r.error <= tol]
    for r in results:
        status = "ok" if r.error <= tol else "FAIL"
        click.echo(f"{r.kind:6s} trial {r.trial:3d} max_rel_err {r.error:.3e} {status}")
    click.echo(f"{len(results) - len(failed)}/{len(results)} checks passed (tol {tol:g})")
    if failed:
        worst = max(failed, key=lambda r: r.error)
        click.echo(f"worst: {worst.kind} trial {worst.trial} coordinate {worst.worst} "
                   f"error {worst.error:.3e}", err=True)
        sys.exit(EXIT_CHECK_FAILED)


@main.command()
@config_option
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True), help="Default stdout.")
def embed(data_path, model_path, out):
    """Dump common-space embeddings, one JSON record per sample."""
    dataset = _load(data_path)
    try:
        params, _, _ = load_model(model_path)
        emb = embed_samples(dataset.samples, params)
    except XMCNNError as exc:
        raise click.ClickException(str(exc)) from None
    lines = []
    for s, z in zip(dataset.samples, emb):
        rec = {"modality": s.modality}
        if s.cls is not None:
            rec["class"] = s.cls
        if s.label is not None:
            rec["label"] = s.label
        rec["embedding"] = z.tolist()
        lines.append(json.dumps(rec, separators=(",", ":")))
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
