"""Report figures written straight to files (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _finish(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_swap_table(rows, path) -> None:
    """Metric curves against swap ratio.

    Args:
        rows: Dicts with keys ratio, sdri, si_sdri, ssnr, pssnr.
        path: Output image path; format follows the suffix.
    """
    ratios = [100 * r["ratio"] for r in rows]
    fig, (ax_i, ax_s) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_i.plot(ratios, [r["sdri"] for r in rows], "o-", label="SDRi")
    ax_i.plot(ratios, [r["si_sdri"] for r in rows], "s-", label="SI-SDRi")
    ax_i.axhline(0.0, color="0.6", lw=0.8)
    ax_i.set_xlabel("swap ratio (%)")
    ax_i.set_ylabel("dB")
    ax_i.legend()
    ax_s.plot(ratios, [r["ssnr"] for r in rows], "o-", label="SSNR")
    ax_s.plot(ratios, [r["pssnr"] for r in rows], "s--", label="PSSNR")
    ax_s.set_xlabel("swap ratio (%)")
    ax_s.legend()
    _finish(fig, path)


def plot_demo_trajectories(runs: dict, path) -> None:
    """Masked-bin energy and SNR term per step for one or more demo runs.

    Args:
        runs: label -> list of DemoStep.
        path: Output image path.
    """
    fig, (ax_e, ax_l) = plt.subplots(1, 2, figsize=(9, 3.5))
    for label, traj in runs.items():
        steps = [r.step for r in traj]
        ax_e.semilogy(steps, [max(r.masked_energy, 1e-12) for r in traj], label=label)
        ax_l.plot(steps, [r.snr_term for r in traj], label=label)
    ax_e.set_xlabel("step")
    ax_e.set_ylabel("masked-bin energy")
    ax_l.set_xlabel("step")
    ax_l.set_ylabel("SNR term (dB)")
    ax_e.legend()
    _finish(fig, path)
