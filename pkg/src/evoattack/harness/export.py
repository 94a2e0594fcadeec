"""Writing reports to disk: report.json, summary.csv and binary PGM/PPM dumps."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .experiment import ExperimentReport

SUMMARY_COLUMNS = ["model", "eps", "attack", "defense", "ASR", "median_queries", "budget", "M"]


class ExportError(OSError):
    pass


def to_bytes(img) -> np.ndarray:
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)


def write_pnm(path, img) -> None:
    """Binary PGM for 1 channel, PPM for 3 channels; 8 bits per sample."""
    img = np.asarray(img)
    c, h, w = img.shape
    if c == 1:
        header, body = b"P5", to_bytes(img[0])
    elif c == 3:
        header, body = b"P6", to_bytes(img.transpose(1, 2, 0))
    else:
        raise ValueError(f"PGM/PPM need 1 or 3 channels, got {c}")
    with open(path, "wb") as fh:
        fh.write(header + f"\n{w} {h}\n255\n".encode("ascii") + body.tobytes())


def read_pnm(path) -> np.ndarray:
    """Inverse of :func:`write_pnm`; returns a float image in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace byte before the raster
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit images are supported")
    channels = {b"P5": 1, b"P6": 3}.get(magic)
    if channels is None:
        raise ValueError(f"{path}: not a binary PGM/PPM (magic {magic!r})")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * channels, offset=pos)
    return raster.reshape(h, w, channels).transpose(2, 0, 1).astype(np.float64) / 255.0


def summary_row(report: ExperimentReport) -> dict:
    cfg = report.config
    model = cfg.get("model_name") or (os.path.basename(cfg["model_path"]) if cfg.get("model_path") else "")
    return {
        "model": model,
        "eps": cfg["eps"],
        "attack": cfg["attack"],
        "defense": cfg.get("defense") or "none",
        "ASR": report.asr,
        "median_queries": "" if report.median_queries is None else report.median_queries,
        "budget": report.budget,
        "M": len(report.attacked),
    }


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=1)


def export_report(report: ExperimentReport, out_dir, images: bool = True) -> Path:
    """Write ``report.json``, ``summary.csv`` and, per attacked image,
    ``NNNN_original``, ``NNNN_adversarial`` and ``NNNN_difference`` images.

    The difference image maps ``adversarial - original`` from [-eps, eps]
    onto [0, 1], so mid-grey means unchanged.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report_json(report))
        with open(out / "summary.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
            writer.writeheader()
            writer.writerow(summary_row(report))
        if images:
            img_dir = out / "images"
            img_dir.mkdir(exist_ok=True)
            eps = float(report.config["eps"]) or 1.0
            for row in report.attacked:
                shape = tuple(row["shape"])
                orig = np.asarray(row["original"]).reshape(shape)
                adv = np.asarray(row["adversarial"]).reshape(shape)
                ext = "pgm" if shape[0] == 1 else "ppm"
                stem = img_dir / f"{row['index']:04d}"
                write_pnm(f"{stem}_original.{ext}", orig)
                write_pnm(f"{stem}_adversarial.{ext}", adv)
                write_pnm(f"{stem}_difference.{ext}", np.clip(0.5 + (adv - orig) / (2 * eps), 0, 1))
    except OSError as exc:
        raise ExportError(f"could not export report to {out}: {exc}") from exc
    return out


def load_report(path) -> ExperimentReport:
    with open(path) as fh:
        return ExperimentReport.from_dict(json.load(fh))
