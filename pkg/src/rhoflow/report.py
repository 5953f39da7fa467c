"""Result persistence: curve and posterior documents, run manifests and plot data."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
import sys
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .bayes import DiscretePosterior, RhoPrior
from .causal import AfBounds, RhoCurve
from .errors import SchemaError, StorageError

CURVE_FORMAT = "rhoflow.curve/1"
POSTERIOR_FORMAT = "rhoflow.posterior/1"
MANIFEST_FORMAT = "rhoflow.manifest/1"


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def write_text(path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return path


def write_json(path, doc: dict) -> Path:
    return write_text(path, json.dumps(doc, indent=2, sort_keys=False) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise StorageError(f"cannot hash {path}: {exc}") from exc
    return h.hexdigest()


# ---------------------------------------------------------------------------
# curves


def curve_to_dict(curve: RhoCurve, af: AfBounds | None = None, config: dict | None = None) -> dict:
    doc = {
        "format": CURVE_FORMAT,
        "grid": curve.rhos.tolist(),
        "ace": curve.aces.tolist(),
        "rho_value": curve.rho_value,
        "crossing": curve.crossing,
        "inf_ace": curve.inf_ace,
        "sup_ace": curve.sup_ace,
        "af_bounds": af.to_dict() if af is not None else None,
        "seeds": curve.meta.get("seeds"),
        "levels": {"a1": curve.meta.get("a1"), "a0": curve.meta.get("a0")},
        "config": config,
    }
    return doc


def curve_from_dict(doc: dict) -> RhoCurve:
    if doc.get("format") != CURVE_FORMAT:
        raise SchemaError(f"not a {CURVE_FORMAT} document")
    try:
        points = tuple(zip(doc["grid"], doc["ace"]))
        meta = {"seeds": doc.get("seeds"), **(doc.get("levels") or {})}
        return RhoCurve(points, doc["rho_value"], doc.get("crossing"), meta)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed curve document: {exc}") from exc


def curve_csv(curve: RhoCurve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rho", "ace"])
    for rho, ace in curve.points:
        writer.writerow([repr(rho), repr(ace)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# posteriors


def posterior_to_dict(summary: dict, prior: RhoPrior, grid, q_values, quantity: str) -> dict:
    post: DiscretePosterior = summary["posterior"]
    x, f = summary["density_samples"]
    return {
        "format": POSTERIOR_FORMAT,
        "quantity": quantity,
        "grid": [float(g) for g in grid],
        "q_values": [float(q) for q in q_values],
        "support": post.support.tolist(),
        "pmf": post.pmf.tolist(),
        "mean": summary["mean"],
        "bandwidth": summary["bandwidth"],
        "density_samples": {"q": x.tolist(), "density": f.tolist()},
        "credible_interval": summary["credible_interval"],
        "prob_greater": summary["prob_greater"],
        "prior": prior.to_dict(),
    }


def table_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([repr(float(v)) for v in row] for row in rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    """What is needed to re-run a command bit-identically."""

    command: str
    argv: list
    seeds: list
    config: dict
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: list = field(default_factory=list)
    version: str = field(default_factory=tool_version)

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "command": self.command,
            "argv": list(self.argv),
            "seeds": list(self.seeds),
            "config": self.config,
            "inputs": self.inputs,
            "outputs": [str(p) for p in self.outputs],
            "version": self.version,
            "platform": {"python": sys.version.split()[0], "machine": platform.machine()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunManifest":
        if doc.get("format") != MANIFEST_FORMAT:
            raise SchemaError(f"not a {MANIFEST_FORMAT} document")
        return cls(doc["command"], doc["argv"], doc["seeds"], doc["config"], doc["inputs"], doc["outputs"], doc["version"])


def manifest_path(output: Path) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


# ---------------------------------------------------------------------------
# plot data


def _plot_svg(path: Path, draw) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed metadata and id salt keep the SVG byte-stable across runs
    with matplotlib.rc_context({"svg.hashsalt": "rhoflow"}):
        fig, ax = plt.subplots(figsize=(6, 4))
    try:
        draw(ax)
        fig.tight_layout()
        with matplotlib.rc_context({"svg.hashsalt": "rhoflow"}):
            fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    try:
        ET.parse(path)
    except ET.ParseError as exc:
        raise StorageError(f"{path} is not well-formed SVG: {exc}") from exc
    return path


def emit_curve_plot(curve: RhoCurve, stem, af: AfBounds | None = None) -> list:
    stem = Path(stem)
    csv_path = write_text(stem.with_suffix(".csv"), curve_csv(curve))

    def draw(ax):
        ax.plot(curve.rhos, curve.aces, "o-", color="tab:blue", label="ACE")
        ax.axhline(0.0, color="grey", lw=0.8)
        ax.axvline(curve.rho_value, color="tab:red", ls="--", label=f"rho_value = {curve.rho_value:.3f}")
        ax.axhline(curve.inf_ace, color="tab:green", ls=":", label="inf / sup")
        ax.axhline(curve.sup_ace, color="tab:green", ls=":")
        if af is not None:
            ax.axhline(af.lower, color="black", ls="-.", label="AF bounds")
            ax.axhline(af.upper, color="black", ls="-.")
        ax.set_xlabel("rho")
        ax.set_ylabel("ACE")
        ax.legend(fontsize="small")

    svg_path = _plot_svg(stem.with_suffix(".svg"), draw)
    return [csv_path, svg_path]


def emit_posterior_plot(doc: dict, stem) -> list:
    stem = Path(stem)
    q = np.asarray(doc["density_samples"]["q"])
    f = np.asarray(doc["density_samples"]["density"])
    csv_path = write_text(stem.with_suffix(".csv"), table_csv(["q", "density"], zip(q, f)))
    ci = doc["credible_interval"]

    def draw(ax):
        ax.plot(q, f, color="tab:blue")
        inside = (q >= ci["lo"]) & (q <= ci["hi"])
        ax.fill_between(q[inside], f[inside], color="tab:blue", alpha=0.25, label=f"{ci['level']:.0%} credible interval")
        ax.vlines(doc["support"], 0, np.asarray(doc["pmf"]) * f.max() / max(doc["pmf"]), color="grey", lw=0.8)
        ax.set_xlabel(doc.get("quantity", "Q"))
        ax.set_ylabel("density")
        ax.legend(fontsize="small")

    svg_path = _plot_svg(stem.with_suffix(".svg"), draw)
    return [csv_path, svg_path]


def emit_plot_data(result, stem) -> list:
    """CSV of plotted points plus an SVG rendering, for a curve or a posterior document."""
    if isinstance(result, RhoCurve):
        return emit_curve_plot(result, stem)
    if isinstance(result, dict) and result.get("format") == CURVE_FORMAT:
        af = result.get("af_bounds")
        return emit_curve_plot(curve_from_dict(result), stem, AfBounds(**af) if af else None)
    if isinstance(result, dict) and result.get("format") == POSTERIOR_FORMAT:
        return emit_posterior_plot(result, stem)
    raise SchemaError("plot data needs a curve or a posterior document")
