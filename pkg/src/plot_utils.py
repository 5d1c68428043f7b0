import matplotlib.pyplot as plt
import seaborn as sns

sns.set_theme("notebook", "darkgrid")
palette = sns.color_palette("colorblind")


def plot_loss_curve(steps, losses, path=None, dev_sdr=None):
    fig, ax = plt.subplots(1, 1, figsize=(10, 6))
    ax.plot(steps, losses, label="Training Loss", color=palette[0])
    ax.set_xlabel("Training Steps")
    ax.set_ylabel("Loss")
    ax.set_title("Training Loss Curve")
    if dev_sdr:
        ax2 = ax.twinx()
        ax2.plot(list(dev_sdr), list(dev_sdr.values()), "o-", color=palette[1], label="Dev SDR")
        ax2.set_ylabel("dev SDR (dB)")
    ax.legend()
    if path is not None:
        fig.savefig(path)
        plt.close(fig)
    return fig, ax


def plot_lookahead(sweep_df, reference=None):
    """SDR vs look-ahead with run-to-run std; reference is the non-causal SDR line."""
    stats = sweep_df.groupby("look_ahead_ms")[["sdr_dev", "sdr_eval"]].agg(["mean", "std"]).fillna(0.0)
    fig, ax = plt.subplots(1, 1)

    for color, column, label in [(0, "sdr_dev", "dev"), (1, "sdr_eval", "eval")]:
        ax.errorbar(
            stats.index,
            stats[(column, "mean")],
            yerr=stats[(column, "std")],
            fmt="o-",
            color=palette[color],
            label=label,
            lw=2,
            capsize=3,
        )
    if reference is not None:
        ax.axhline(reference, ls="--", color="gray", label="non-causal")
    ax.set_xlabel("look-ahead (ms)")
    ax.set_ylabel("SDR (dB)")
    ax.legend(loc="lower right")
    fig.set_size_inches(5, 3)
    return fig, ax


def plot_search_scatter(scatter_df):
    """Best dev SDR of every search trial against weights and against ops per second."""
    fig, axes = plt.subplots(1, 2, sharey=True)
    ok = scatter_df[scatter_df.status == "ok"] if "status" in scatter_df else scatter_df
    for ax, column, label in [
        (axes[0], "param_count", "weights"),
        (axes[1], "ops_per_second", "multiply-adds per second"),
    ]:
        sns.scatterplot(data=ok, x=column, y="sdr", hue="conv_config", ax=ax, palette="colorblind")
        ax.set_xscale("log")
        ax.set_xlabel(label)
    axes[0].set_ylabel("SDR (dB)")
    fig.set_size_inches(8, 3)
    return fig, axes
