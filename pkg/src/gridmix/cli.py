"""Operator command line.

Commands: groupsize (sizing math), run (one round), sweep (group-count
scaling report), compare-variants (cost report).  Reports write a CSV
table, a JSONL metrics file, and a rendered PNG figure side by side.

Exit codes for run: 0 released, 10 destroyed, 11 aborted,
12 unrecoverable, 2 bad configuration.  A JSON config file passed with
--config takes precedence over flags, which take precedence over
defaults.
"""

import csv
import json
import sys
from pathlib import Path

import click

from .apps import (
    BulletinBoard, dial, dial_payload_len, open_mailbox, route_dials,
)
from .crypto import keygen, seeded_rng
from .groups import get_group
from .grouping import malicious_group_probability, required_group_size
from .simnet import (
    AdversaryScript, Behavior, RoundConfig, compare_variants, run_round,
    scaling_sweep, write_metrics_jsonl,
)

EXIT_RELEASED = 0
EXIT_CONFIG = 2
EXIT_DESTROYED = 10
EXIT_ABORTED = 11
EXIT_UNRECOVERABLE = 12

_STATUS_CODES = {
    "released": EXIT_RELEASED,
    "destroyed": EXIT_DESTROYED,
    "aborted": EXIT_ABORTED,
    "unrecoverable": EXIT_UNRECOVERABLE,
}

# CLI names its round flavors nizk/trap/basic; the library calls the
# proof-carrying one "verified"
_VARIANTS = {"basic": "basic", "nizk": "verified", "trap": "trap"}


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


def _load_adversary(path):
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"adversary script {path}: {exc}")
    behaviors = {}
    for server, items in raw.get("behaviors", {}).items():
        parsed = []
        for item in items:
            try:
                parsed.append(Behavior(
                    kind=item["kind"], layer=item.get("layer"),
                    vertex=item.get("vertex"),
                    count=item.get("count", 1),
                    once=item.get("once", True)))
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"bad behavior entry {item}: {exc}")
        behaviors[server] = parsed
    script = AdversaryScript(behaviors) if behaviors else None
    failures = {str(k): int(v) for k, v in raw.get("failures", {}).items()}
    return script, failures or None


def _build_config(opts) -> RoundConfig:
    """defaults < flags < config file."""
    if opts.get("config"):
        try:
            overrides = json.loads(Path(opts["config"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config file: {exc}")
        unknown = set(overrides) - set(opts)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        opts = {**opts, **overrides}

    variant = _VARIANTS.get(opts["variant"])
    if variant is None:
        raise ConfigError(f"unknown variant {opts['variant']!r}")
    messages = opts["messages"]
    if variant == "trap":
        if messages % 2:
            raise ConfigError("trap rounds need an even message count "
                              "(one trap per message)")
        users = messages // 2
    else:
        users = messages

    k, h, f = opts["group_size"], opts["honest"], opts["fraction"]
    if h > k:
        raise ConfigError(f"honest minimum {h} exceeds group size {k}")
    if f > 0 and not opts["unsafe_override"]:
        needed = required_group_size(f, opts["groups"], -64, h=h)
        if k < needed:
            raise ConfigError(
                f"group size {k} below the safe size {needed} for "
                f"f={f}, G={opts['groups']}, h={h}; pass "
                f"--unsafe-override to run a desk-scale group anyway")

    adversary = failures = None
    if opts.get("adversary"):
        adversary, failures = _load_adversary(opts["adversary"])

    return RoundConfig(
        variant=variant, num_users=users, iterations=opts["iterations"],
        num_groups=opts["groups"], group_size=k, honest_min=h,
        message_len=opts["message_len"], backend=opts["backend"],
        seed=opts["seed"], round_id=opts["round_id"],
        modeled=opts.get("modeled", False),
        disjoint_groups=opts.get("disjoint", False),
        adversary=adversary, failures=failures)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path, rows) -> None:
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


_round_options = [
    click.option("--variant", default="trap", show_default=True,
                 type=click.Choice(sorted(_VARIANTS))),
    click.option("--messages", "-M", default=8, show_default=True,
                 help="messages entering the mix"),
    click.option("--groups", "-G", default=4, show_default=True),
    click.option("--group-size", "-k", default=2, show_default=True),
    click.option("--honest", "-h", "honest", default=1, show_default=True,
                 help="honest members assumed per group"),
    click.option("--iterations", "-T", default=2, show_default=True),
    click.option("--fraction", "-f", default=0.0, show_default=True,
                 help="assumed fraction of adversarial servers"),
    click.option("--seed", default=0, show_default=True),
    click.option("--round-id", default=1, show_default=True),
    click.option("--message-len", default=8, show_default=True),
    click.option("--backend", default="modp", show_default=True,
                 type=click.Choice(["modp", "p256", "tiny"])),
    click.option("--modeled", is_flag=True,
                 help="cost-model timing only, no real cryptography"),
    click.option("--disjoint", is_flag=True,
                 help="partition servers into non-overlapping groups"),
    click.option("--adversary", type=click.Path(), default=None,
                 help="JSON adversary/failure script"),
    click.option("--unsafe-override", is_flag=True,
                 help="allow a group size below the safety formula"),
    click.option("--config", type=click.Path(), default=None,
                 help="JSON file whose keys override these flags"),
    click.option("--out", type=click.Path(), default="out",
                 show_default=True, help="output directory"),
]


def round_options(fn):
    for opt in reversed(_round_options):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Horizontally scalable anonymous messaging, desk scale."""


@main.command()
@click.argument("fraction", type=float)
@click.argument("groups", type=int)
@click.argument("honest", type=int, default=1)
@click.option("--eps-log2", default=-64, show_default=True,
              help="log2 of the tolerated failure probability")
def groupsize(fraction, groups, honest, eps_log2):
    """Smallest safe group size for an adversarial FRACTION and GROUPS
    groups needing HONEST honest members each."""
    try:
        k = required_group_size(fraction, groups, eps_log2, h=honest)
    except ValueError as exc:
        raise ConfigError(str(exc))
    p = malicious_group_probability(k, fraction, honest)
    bound = float(p * groups)
    click.echo(f"group size k = {k}")
    click.echo(f"per-group failure probability = {float(p):.3e}")
    click.echo(f"union bound over {groups} groups = {bound:.3e}"
               f" < 2^{eps_log2}")


@main.command()
@round_options
@click.option("--app", default="microblog", show_default=True,
              type=click.Choice(["microblog", "dial"]))
@click.option("--mailboxes", default=4, show_default=True)
def run(app, mailboxes, **opts):
    """Run one round and write transcript, metrics, and app output."""
    cfg = _build_config(opts)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)

    dial_keys = None
    if app == "dial":
        cfg, dial_keys = _prepare_dial_round(cfg, mailboxes)

    result = run_round(cfg)

    transcript = {
        "config": {k: v for k, v in vars(cfg).items()
                   if k not in ("adversary", "failures", "payloads")},
        "scripted": bool(cfg.adversary or cfg.failures),
        "status": result.status,
        "reason": result.reason,
        "accused": result.accused,
        "published": [p.hex() for p in result.published],
    }
    _write_json(out / "transcript.json", transcript)
    write_metrics_jsonl(out / "metrics.jsonl", [result.metrics])

    lines = [f"round {cfg.round_id}: {result.status} ({result.reason})"]
    if result.accused:
        lines.append(f"accused: {', '.join(result.accused)}")
    lines += _app_summary(app, cfg, result, mailboxes, dial_keys, out)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    click.echo("\n".join(lines))
    sys.exit(_STATUS_CODES[result.status])


def _prepare_dial_round(cfg, mailboxes):
    """Random pairings: user i dials user (i+1) mod n."""
    group = get_group(cfg.backend)
    rng = seeded_rng("cli-dial", cfg.seed)
    users = [keygen(group, rng) for _ in range(cfg.num_users)]
    payloads, expected = [], []
    for i, kp in enumerate(users):
        target = users[(i + 1) % len(users)]
        payload, session, _ = dial(group, kp, target.pk, mailboxes, rng)
        payloads.append(payload)
        expected.append(((i + 1) % len(users), session))
    cfg = RoundConfig(**{**vars(cfg), "payloads": payloads,
                         "message_len": dial_payload_len(group)})
    return cfg, (group, users, expected)


def _app_summary(app, cfg, result, mailboxes, dial_keys, out):
    if result.status != "released":
        return ["no release, nothing published"]
    if app == "microblog":
        board = BulletinBoard()
        entries = board.publish(cfg.round_id, result)
        path = out / "board.json"
        _write_json(path, [e.hex() for e in entries])
        return [f"bulletin board: {len(entries)} entries -> {path}"]
    group, users, expected = dial_keys
    boxes = route_dials(result.published, mailboxes)
    agreed = 0
    for target_idx, session in expected:
        kp = users[target_idx]
        contacts = []
        for box in boxes:
            contacts += open_mailbox(group, kp, box)
        agreed += any(c.session_key == session for c in contacts)
    return [f"dialing: {agreed}/{len(expected)} sessions agreed "
            f"across {mailboxes} mailboxes"]


@main.command()
@round_options
@click.option("--group-counts", default="4,8,16", show_default=True,
              help="comma-separated group counts to sweep")
def sweep(group_counts, **opts):
    """Group-count scaling report: CSV + JSONL + figure."""
    cfg = _build_config(opts)
    try:
        counts = [int(x) for x in group_counts.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad group counts {group_counts!r}")
    if not counts:
        raise ConfigError("no group counts given")
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)

    rows = scaling_sweep(cfg, counts)
    _write_csv(out / "sweep.csv", rows)
    write_metrics_jsonl(out / "sweep.jsonl", rows)
    from .figures import render_sweep_figure
    render_sweep_figure(rows, out / "sweep.png")

    for row in rows:
        click.echo(f"G={row['groups']:4d} touches={row['touches_per_group_max']:8d}"
                   f" cost={row['cost_latency_ms']:10.1f}ms"
                   f" wall={row['latency_ms']:10.1f}ms")
    click.echo(f"wrote {out / 'sweep.csv'}, {out / 'sweep.jsonl'}, "
               f"{out / 'sweep.png'}")


@main.command("compare-variants")
@round_options
@click.option("--variants", default="nizk,trap", show_default=True)
def compare(variants, **opts):
    """Cost comparison across variants at equal message load."""
    cfg = _build_config(opts)
    names = [v.strip() for v in variants.split(",") if v.strip()]
    unknown = [v for v in names if v not in _VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variants: {unknown}")
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)

    rows = compare_variants(cfg, [_VARIANTS[v] for v in names])
    for row, name in zip(rows, names):
        row["variant"] = name
    _write_csv(out / "compare.csv", rows)
    write_metrics_jsonl(out / "compare.jsonl", rows)
    from .figures import render_compare_figure
    render_compare_figure(rows, out / "compare.png")

    for row in rows:
        click.echo(f"{row['variant']:8s} cost={row['cost_latency_ms']:10.1f}ms"
                   f" wall={row['latency_ms']:10.1f}ms"
                   f" messages={row['messages']}")
    if len(rows) == 2 and rows[1]["cost_latency_ms"]:
        ratio = rows[0]["cost_latency_ms"] / rows[1]["cost_latency_ms"]
        click.echo(f"cost ratio {names[0]}/{names[1]} = {ratio:.2f}")
    click.echo(f"wrote {out / 'compare.csv'}, {out / 'compare.jsonl'}, "
               f"{out / 'compare.png'}")


if __name__ == "__main__":
    main()
