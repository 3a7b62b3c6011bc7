"""Figure rendering for the report commands.

Every figure is written headlessly with pinned metadata so a rerun of
the same config produces the same bytes.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_SAVE = dict(dpi=120, metadata={"Software": "gridmix"})


def render_sweep_figure(rows, path) -> None:
    """Group-count sweep: touches per group and cost-model latency,
    both against the number of groups."""
    groups = [r["groups"] for r in rows]
    touches = [r["touches_per_group_max"] for r in rows]
    cost = [r["cost_latency_ms"] for r in rows]
    wall = [r["latency_ms"] for r in rows]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.plot(groups, touches, "o-", color="#1f6fb2")
    ax1.set_xscale("log", base=2)
    ax1.set_yscale("log", base=2)
    ax1.set_xlabel("groups")
    ax1.set_ylabel("ciphertext touches per group")
    ax1.set_title("work per group")
    ax1.grid(True, which="both", alpha=0.3)

    ax2.plot(groups, cost, "s-", color="#b23a1f", label="compute only")
    ax2.plot(groups, wall, "o--", color="#6b6b6b", label="with links")
    ax2.set_xscale("log", base=2)
    ax2.set_yscale("log", base=2)
    ax2.set_xlabel("groups")
    ax2.set_ylabel("round latency (ms)")
    ax2.set_title("latency scaling")
    ax2.legend()
    ax2.grid(True, which="both", alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def render_compare_figure(rows, path) -> None:
    """Variant comparison at equal message load."""
    names = [r["variant"] for r in rows]
    cost = [r["cost_latency_ms"] for r in rows]
    wall = [r["latency_ms"] for r in rows]

    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    xs = range(len(names))
    ax.bar([x - 0.18 for x in xs], cost, width=0.36, color="#b23a1f",
           label="compute only")
    ax.bar([x + 0.18 for x in xs], wall, width=0.36, color="#6b6b6b",
           label="with links")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names)
    ax.set_ylabel("round latency (ms)")
    ax.set_title("variant cost at equal load")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
