import csv
import json
import logging
import os
from typing import Dict, List, Sequence

from ..config.config import REPORT_VERSION

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)


class ReportWriter:
    """Writes verification reports and per-check series for external plotting."""

    def __init__(self, output_dir: str = "output"):
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

    @staticmethod
    def build_document(reports: List[Dict], config_digest: str) -> Dict:
        return {
            "version": REPORT_VERSION,
            "config_digest": config_digest,
            "reports": reports,
        }

    def save_report(self, reports: List[Dict], config_digest: str, filename: str = "report.json") -> str:
        """Save reports as JSON; identical inputs give byte-identical files."""
        filepath = filename if os.path.isabs(filename) else os.path.join(self.output_dir, filename)
        with open(filepath, "w", encoding="utf-8") as f:
            json.dump(self.build_document(reports, config_digest), f, indent=2, sort_keys=True)
            f.write("\n")
        logging.info(f"Report with {len(reports)} checks saved to {filepath}")
        return filepath

    def save_series(self, name: str, header: Sequence[str], rows: Sequence[Sequence]) -> str:
        filepath = os.path.join(self.output_dir, f"{name}.csv")
        with open(filepath, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(list(header))
            writer.writerows(rows)
        logging.debug(f"Series {name} ({len(rows)} rows) saved to {filepath}")
        return filepath
