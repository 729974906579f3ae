"""Report bundle layout and invariants.

A finished run produces::

    out/<question_id>/
      report.md
      assets/*.png
      trajectory.json
      meta.json

Every image reference in report.md must resolve to a file under the bundle
or to an external url recorded in meta.json.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass

from .errors import StoreValidationError

_IMAGE_REF_RE = re.compile(r"!\[[^\]]*\]\(([^)\s]+)\)")


def iter_image_refs(markdown: str) -> list[str]:
    """All image targets referenced from a markdown document, in order."""
    return _IMAGE_REF_RE.findall(markdown)


def local_asset_refs(markdown: str) -> list[str]:
    return [t for t in iter_image_refs(markdown) if not t.startswith(("http://", "https://"))]


def external_figure_refs(markdown: str) -> list[str]:
    return [t for t in iter_image_refs(markdown) if t.startswith(("http://", "https://"))]


@dataclass
class ReportBundle:
    root: str

    @property
    def report_path(self) -> str:
        return os.path.join(self.root, "report.md")

    @property
    def assets_dir(self) -> str:
        return os.path.join(self.root, "assets")

    @property
    def trajectory_path(self) -> str:
        return os.path.join(self.root, "trajectory.json")

    @property
    def meta_path(self) -> str:
        return os.path.join(self.root, "meta.json")

    def report_text(self) -> str:
        with open(self.report_path, encoding="utf-8") as fh:
            return fh.read()

    def meta(self) -> dict:
        with open(self.meta_path, encoding="utf-8") as fh:
            return json.load(fh)

    def asset_files(self) -> list[str]:
        if not os.path.isdir(self.assets_dir):
            return []
        return sorted(os.listdir(self.assets_dir))

    def validate(self) -> None:
        """Check bundle invariants; raises with the first violation found."""
        for required in (self.report_path, self.trajectory_path, self.meta_path):
            if not os.path.exists(required):
                raise StoreValidationError(f"bundle missing {os.path.basename(required)}")
        text = self.report_text()
        if not text.strip():
            raise StoreValidationError("bundle report.md is empty")
        meta = self.meta()
        recorded_external = set(meta.get("external_figures", []))
        for target in iter_image_refs(text):
            if target.startswith(("http://", "https://")):
                if target not in recorded_external:
                    raise StoreValidationError(
                        f"external figure {target} not recorded in meta.json")
                continue
            resolved = os.path.normpath(os.path.join(self.root, target))
            if not resolved.startswith(os.path.normpath(self.root)):
                raise StoreValidationError(f"asset reference escapes bundle: {target}")
            if not os.path.exists(resolved):
                raise StoreValidationError(f"asset reference does not resolve: {target}")

    @classmethod
    def load(cls, root: str) -> "ReportBundle":
        bundle = cls(root=root)
        bundle.validate()
        return bundle
