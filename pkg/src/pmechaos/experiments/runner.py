"""Run a study into an output directory, record a manifest, and summarize it."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field

from .. import __version__
from ..errors import IntegrityError, PmeChaosError
from .config import ExperimentConfig, load_config
from .io import save_array, sha256_file, write_csv, write_json
from .studies import Check, run_study_body

__all__ = ["RunManifest", "load_manifest", "report", "run_study"]

MANIFEST = "manifest.json"
CONFIG = "config.toml"


@dataclass
class RunManifest:
    """What a run produced and how: hashes, seeds, files, timings and check outcomes."""

    study: str
    config_hash: str
    code_version: str
    out_dir: str
    seeds: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    status: str = "incomplete"

    @property
    def passed(self):
        return self.status == "passed"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _status(checks, failures):
    if failures:
        return "partial"
    gated = [c for c in checks if c["gated"]]
    if not gated:
        return "failed"
    return "passed" if all(c["passed"] for c in gated) else "failed"


def run_study(config, out_dir=None, workers=1, dry_run=False, body=None):
    """Execute ``config`` and write its artifacts plus ``manifest.json`` into ``out_dir``.

    ``config`` is an :class:`ExperimentConfig`, a dict or a TOML path.  A
    module error inside a branch (one N or eta value) is recorded in the
    manifest and the remaining branches still run; the manifest status is
    then ``partial``.  With ``dry_run`` the configuration is validated and
    the manifest of a not-yet-run study is returned without writing files.
    ``body`` selects an alternative study function (``"solve_pde"``).
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    out = os.path.abspath(out_dir or cfg.output_dir)
    manifest = RunManifest(cfg.study, cfg.config_hash(), __version__, out)
    if dry_run:
        manifest.status = "dry-run"
        return manifest
    os.makedirs(out, exist_ok=True)
    files = []
    with open(os.path.join(out, CONFIG), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_toml())
    files.append(CONFIG)
    t0 = time.perf_counter()
    try:
        res = run_study_body(cfg, workers, body)
    except PmeChaosError as exc:
        manifest.failures.append({"branch": "study", "error": f"{type(exc).__name__}: {exc}"})
        manifest.status = "partial"
        manifest.timings["total"] = time.perf_counter() - t0
        manifest.files = {f: sha256_file(os.path.join(out, f)) for f in files}
        write_json(os.path.join(out, MANIFEST), manifest.to_dict())
        return manifest
    manifest.timings = {**res.timings, "total": time.perf_counter() - t0}
    for name, rows in res.tables.items():
        # a table is a row list, or (rows, fieldnames) for a non-default layout
        if isinstance(rows, tuple):
            write_csv(os.path.join(out, name), *rows)
        else:
            write_csv(os.path.join(out, name), rows)
        files.append(name)
    for name, obj in res.reports.items():
        write_json(os.path.join(out, name), obj)
        files.append(name)
    for name, (arr, meta) in res.arrays.items():
        _, side = save_array(os.path.join(out, name), arr, **meta)
        files += [name, os.path.basename(side)]
    checks = [c.to_dict() for c in res.checks]
    write_json(os.path.join(out, "checks.json"), checks)
    files.append("checks.json")
    manifest.files = {f: sha256_file(os.path.join(out, f)) for f in sorted(files)}
    manifest.seeds = {k: int(v) for k, v in res.seeds.items()}
    manifest.checks = checks
    manifest.notes = list(res.notes)
    manifest.failures = list(res.failures)
    manifest.status = _status(checks, res.failures)
    write_json(os.path.join(out, MANIFEST), manifest.to_dict())
    return manifest


def load_manifest(path):
    """Read a manifest (file or run directory) and verify its stored config hash."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST)
    if not os.path.exists(path):
        raise IntegrityError(f"no manifest at {path}")
    with open(path, encoding="utf-8") as fh:
        manifest = RunManifest.from_dict(json.load(fh))
    cfg_path = os.path.join(os.path.dirname(os.path.abspath(path)), CONFIG)
    if os.path.exists(cfg_path):
        if load_config(cfg_path).config_hash() != manifest.config_hash:
            raise IntegrityError("stored config does not match the manifest's config hash")
    manifest.out_dir = os.path.dirname(os.path.abspath(path))
    return manifest


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def report(manifest):
    """Render the summary table of ``manifest``.

    Returns ``(text, ok)`` where ``ok`` is true only if every gated check
    passed and no branch failed.  Raises :class:`IntegrityError` for an empty
    manifest or when referenced artifacts are missing or altered.
    """
    if isinstance(manifest, (str, os.PathLike)):
        manifest = load_manifest(manifest)
    if not manifest.files or (not manifest.checks and not manifest.failures):
        raise IntegrityError("manifest is empty: no artifacts or checks recorded")
    missing, altered = [], []
    for name, digest in manifest.files.items():
        p = os.path.join(manifest.out_dir, name)
        if not os.path.exists(p):
            missing.append(name)
        elif sha256_file(p) != digest:
            altered.append(name)
    if missing or altered:
        raise IntegrityError(f"missing artifacts: {missing}; altered artifacts: {altered}")
    header = ("rate", "check", "fitted", "residual", "band", "status")
    body = []
    for c in manifest.checks:
        c = Check(**c)
        status = ("pass" if c.passed else "FAIL") if c.gated else ("info:pass" if c.passed else "info:fail")
        body.append((c.rate, c.name, _fmt(c.fitted), _fmt(c.residual), c.band, status))
    for f in manifest.failures:
        body.append(("-", f"branch {f['branch']}", "-", "-", "-", "FAILED"))
    widths = [max(len(str(r[i])) for r in [header, *body]) for i in range(len(header))]
    line = lambda r: "  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip()  # noqa: E731
    lines = [f"study {manifest.study}  config {manifest.config_hash[:12]}  status {manifest.status}", line(header)]
    lines.append("  ".join("-" * w for w in widths))
    lines += [line(r) for r in body]
    for note in manifest.notes:
        lines.append(f"note: {note}")
    ok = manifest.status == "passed" and not manifest.failures
    return "\n".join(lines), ok
