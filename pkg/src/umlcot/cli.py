"""Command line interface: ``umlcot parse|reward|evaluate|advantages|simulate``.

Exit codes: 0 success, 1 bad input, 2 internal or embedding-service
failure.  Errors are written to stderr as a JSON object.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .corpus import load_corpus, resolve_config, evaluate_corpus
from .exceptions import InputError
from .grpo import ToyPolicy, normalize_advantages, run_simulation
from .reward import as_reference_diagram, total_reward
from .uml import parse_activity, parse_class


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _emit(ctx: click.Context, text: str) -> None:
    out = ctx.obj["out"]
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        click.echo(text, nl=False)


def _run_config(ctx: click.Context, **extra):
    obj = ctx.obj
    cli = dict(obj["settings"])
    cli.update({k: v for k, v in extra.items() if v is not None})
    return resolve_config(cli, obj["config"])


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), help="Flat key = value config file.")
@click.option("--embedder", type=click.Choice(["builtin", "service"]), default=None)
@click.option("--endpoint", default=None, help="Embedding service URL (else $EMBED_ENDPOINT).")
@click.option("--threshold", type=float, default=None, help="Match threshold for P/R/F1 (default 0.5).")
@click.option("--epsilon", type=float, default=None, help="Advantage stabilizer (default 1e-4).")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write output here instead of stdout.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json")
@click.pass_context
def cli(ctx, config_file, embedder, endpoint, threshold, epsilon, seed, out, fmt):
    """Parse PlantUML plans, score model outputs, and run GRPO math."""
    ctx.obj = {
        "config": config_file,
        "settings": {
            "embedder": embedder,
            "endpoint": endpoint,
            "threshold": threshold,
            "epsilon": epsilon,
            "seed": seed,
        },
        "out": out,
        "format": fmt,
    }


@cli.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(["activity", "class"]), default="activity")
@click.pass_context
def parse(ctx, file, kind):
    """Dump the AST of a PlantUML file as JSON."""
    source = Path(file).read_text(encoding="utf-8")
    diagram = parse_activity(source) if kind == "activity" else parse_class(source)
    _emit(ctx, _dump(diagram.to_dict()))


@cli.command()
@click.argument("ref_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("pred_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["uml", "text"]), default=None)
@click.pass_context
def reward(ctx, ref_file, pred_file, mode):
    """Reward breakdown for one raw model output against a reference."""
    cfg = _run_config(ctx, mode=mode)
    reference = Path(ref_file).read_text(encoding="utf-8")
    prediction = Path(pred_file).read_text(encoding="utf-8")
    result = total_reward(prediction, reference, cfg.mode or "uml", cfg.embedder)
    _emit(ctx, _dump(result.to_dict()))


def _out_paths(out: str) -> tuple[Path, Path]:
    stem = Path(out)
    if stem.suffix in (".json", ".csv"):
        stem = stem.with_suffix("")
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".csv")


@cli.command()
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["uml", "text"]), default=None, help="Override per-instance mode.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--traces/--no-traces", default=False, help="Include match traces in the JSON report.")
@click.pass_context
def evaluate(ctx, corpus, mode, jobs, traces):
    """Score a JSONL corpus.

    With --out PATH both PATH.json and PATH.csv are written and the
    aggregate is printed; otherwise the report goes to stdout in --format.
    """
    cfg = _run_config(ctx, mode=mode)
    report = evaluate_corpus(load_corpus(corpus), cfg, jobs=jobs)
    out = ctx.obj["out"]
    if out:
        json_path, csv_path = _out_paths(out)
        json_path.write_text(report.to_json(traces), encoding="utf-8", newline="\n")
        csv_path.write_text(report.to_csv(), encoding="utf-8", newline="\n")
        click.echo(_dump({"aggregate": report.aggregate.to_dict(), "count": report.count}), nl=False)
    elif ctx.obj["format"] == "csv":
        click.echo(report.to_csv(), nl=False)
    else:
        click.echo(report.to_json(traces), nl=False)


@cli.command()
@click.argument("rewards")
@click.pass_context
def advantages(ctx, rewards):
    """Group-normalized advantages for a comma-separated reward list."""
    cfg = _run_config(ctx)
    try:
        values = [float(x) for x in rewards.split(",") if x.strip()]
    except ValueError as exc:
        raise InputError(f"rewards must be comma-separated numbers: {rewards!r}") from exc
    adv = normalize_advantages(values, cfg.epsilon)
    _emit(ctx, _dump({"rewards": values, "epsilon": cfg.epsilon, "advantages": adv}))


def _load_templates(path: str) -> list[str]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"templates file is not JSON: {exc.msg}") from exc
    if isinstance(data, dict):
        data = data.get("templates")
    if not isinstance(data, list) or not data or not all(isinstance(t, str) for t in data):
        raise InputError("templates file must hold a non-empty JSON list of strings")
    return data


@cli.command()
@click.argument("templates", type=click.Path(exists=True, dir_okay=False))
@click.argument("reference", type=click.Path(exists=True, dir_okay=False))
@click.option("--iterations", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--group-size", type=click.IntRange(min=2), default=None, help="Candidates per group (default 8).")
@click.option("--lr", type=float, default=0.1, show_default=True)
@click.option("--mode", type=click.Choice(["uml", "text"]), default=None)
@click.option("--reward", "reward_kind", type=click.Choice(["total", "accuracy"]), default="total", show_default=True)
@click.option("--steps", "steps_path", type=click.Path(dir_okay=False), default=None, help="Also write step records as JSONL.")
@click.pass_context
def simulate(ctx, templates, reference, iterations, group_size, lr, mode, reward_kind, steps_path):
    """Run the toy softmax policy over fixed templates; emit the learning curve CSV."""
    cfg = _run_config(ctx, mode=mode, group_size=group_size)
    texts = _load_templates(templates)
    mode = cfg.mode or "uml"
    ref = Path(reference).read_text(encoding="utf-8")
    if mode == "uml":
        ref = as_reference_diagram(ref)

    def reward_fn(text: str) -> float:
        r = total_reward(text, ref, mode, cfg.embedder)
        return r.total if reward_kind == "total" else r.accuracy_reward

    policy = ToyPolicy.uniform(texts, learning_rate=lr, rng_seed=cfg.seed)
    result = run_simulation(policy, iterations, cfg.group_size, reward_fn, epsilon=cfg.epsilon)
    if steps_path:
        Path(steps_path).write_text(result.steps_jsonl(), encoding="utf-8", newline="\n")
    _emit(ctx, result.curve_csv())


def _fail(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, prog_name="umlcot", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort as exc:
        return _fail(exc, 1)
    except click.ClickException as exc:
        return _fail(exc, 1)
    except (InputError, FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        return _fail(exc, 1)
    except Exception as exc:  # noqa: BLE001 - every other failure is internal
        return _fail(exc, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
