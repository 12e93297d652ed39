"""
Result tables of an experiment and their on-disk bundle.

The bundle (report.json, one CSV per table, summary.txt) depends only on the experiment
config and seed; wall-clock time goes to run_metadata.json beside it.
"""
import csv
import io
import json
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from tt_video_attack.container import write_atomic
from tt_video_attack.logger import LOGGER as logger
from tt_video_attack.temppattern import CorrelationMatrix, ShiftLossProfile

SCHEMA_VERSION = 1

REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.txt"
RUN_METADATA_FILE = "run_metadata.json"


@dataclass(frozen=True)
class TransferRow:
    """ASR of one attack crafted on `white_box`, against every model column."""

    white_box: str
    attack: str
    config_hash: str
    clip_count: int
    excluded: int
    asr: Tuple[Optional[float], ...]


@dataclass
class TransferMatrix:
    name: str
    model_ids: Tuple[str, ...]
    black_box_ids: Tuple[str, ...]
    eval_size: int
    seed: int
    rows: List[TransferRow] = field(default_factory=list)

    def cell(self, white_box: str, attack: str, model_id: str) -> Optional[float]:
        for row in self.rows:
            if row.white_box == white_box and row.attack == attack:
                return row.asr[self.model_ids.index(model_id)]
        raise KeyError((white_box, attack))

    def white_box_column(self, row: TransferRow) -> Optional[int]:
        """Index of the row's own model among the columns, None when it is not evaluated."""
        return self.model_ids.index(row.white_box) if row.white_box in self.model_ids else None

    def black_box_asr(self, row: TransferRow) -> Optional[float]:
        """Mean ASR over the black-box columns other than the row's own white-box model."""
        values = [
            value
            for model_id, value in zip(self.model_ids, row.asr)
            if model_id in self.black_box_ids and model_id != row.white_box and value is not None
        ]
        return sum(values) / len(values) if values else None

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "model_ids": list(self.model_ids),
            "black_box_ids": list(self.black_box_ids),
            "eval_size": self.eval_size,
            "seed": self.seed,
            "rows": [
                {
                    "white_box": row.white_box,
                    "white_box_column": self.white_box_column(row),
                    "attack": row.attack,
                    "config_hash": row.config_hash,
                    "clip_count": row.clip_count,
                    "excluded": row.excluded,
                    "asr": list(row.asr),
                }
                for row in self.rows
            ],
        }


@dataclass
class Report:
    provenance: Dict
    transfer: Optional[TransferMatrix] = None
    ablations: "OrderedDict[str, TransferMatrix]" = field(default_factory=OrderedDict)
    correlations: List[CorrelationMatrix] = field(default_factory=list)
    shift_loss: List[ShiftLossProfile] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    wall_clock_seconds: Optional[float] = None

    def average_asr(self) -> "OrderedDict[str, Tuple[Optional[float], Optional[float]]]":
        """
        Attack name -> (mean white-box ASR, mean black-box ASR) over all white-box models,
        taken from the transfer matrix and every ablation matrix in order.
        """
        grouped: "OrderedDict[str, Tuple[List[float], List[float]]]" = OrderedDict()
        for matrix in self.matrices():
            for row in matrix.rows:
                white, black = grouped.setdefault(row.attack, ([], []))
                column = matrix.white_box_column(row)
                own = row.asr[column] if column is not None else None
                if own is not None:
                    white.append(own)
                transfer = matrix.black_box_asr(row)
                if transfer is not None:
                    black.append(transfer)
        return OrderedDict(
            (attack, (_mean(white), _mean(black))) for attack, (white, black) in grouped.items()
        )

    def matrices(self) -> List[TransferMatrix]:
        return ([self.transfer] if self.transfer is not None else []) + list(self.ablations.values())


def _mean(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


@dataclass(frozen=True)
class Table:
    name: str
    columns: Tuple[str, ...]
    rows: Tuple[Tuple, ...]

    def to_dict(self) -> Dict:
        return {"columns": list(self.columns), "rows": [list(row) for row in self.rows]}


def transfer_table(matrix: TransferMatrix) -> Table:
    head = ("white_box", "white_box_column", "attack", "config_hash", "clip_count", "excluded")
    rows = tuple(
        (row.white_box, matrix.white_box_column(row), row.attack, row.config_hash, row.clip_count, row.excluded)
        + tuple(row.asr)
        for row in matrix.rows
    )
    return Table(matrix.name, head + tuple(matrix.model_ids), rows)


def correlation_table(matrix: CorrelationMatrix) -> Table:
    rows = tuple(
        (model_id,) + tuple(float(v) for v in matrix.matrix[index]) for index, model_id in enumerate(matrix.model_ids)
    )
    return Table(f"correlation_{matrix.method}", ("model",) + tuple(matrix.model_ids), rows)


def shift_loss_table(profiles: Sequence[ShiftLossProfile]) -> Table:
    shifts = profiles[0].shifts if profiles else ()
    columns = ("model", "strategy", "clip_count") + tuple(f"shift_{s}" for s in shifts)
    rows = tuple((p.model_id, p.strategy, p.clip_count) + tuple(p.mean_losses) for p in profiles)
    return Table("shift_loss", columns, rows)


def average_asr_table(report: Report) -> Table:
    rows = tuple((attack, white, black) for attack, (white, black) in report.average_asr().items())
    return Table("average_asr", ("attack", "white_box_asr", "black_box_asr"), rows)


def report_tables(report: Report) -> List[Table]:
    tables = [transfer_table(matrix) for matrix in report.matrices()]
    tables.extend(correlation_table(matrix) for matrix in report.correlations)
    if report.shift_loss:
        tables.append(shift_loss_table(report.shift_loss))
    if report.matrices():
        tables.append(average_asr_table(report))
    return tables


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(table: Table) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(value) for value in row])
    return buffer.getvalue()


def _percent(value: Optional[float]) -> str:
    return "   n/a" if value is None else f"{100.0 * value:6.2f}"


def render_summary(report: Report) -> str:
    lines = [f"tt-video-attack report (schema {SCHEMA_VERSION})"]
    lines.append(f"config hash: {report.provenance.get('config_hash')}")
    lines.append(f"seed: {report.provenance.get('seed')}")
    for matrix in report.matrices():
        lines.append("")
        lines.append(f"[{matrix.name}] ASR (%) on {matrix.eval_size} clips, white-box cell marked *")
        lines.append("white_box / attack".ljust(40) + " ".join(m.rjust(14) for m in matrix.model_ids))
        for row in matrix.rows:
            own = matrix.white_box_column(row)
            cells = [
                (_percent(value) + ("*" if index == own else " ")).rjust(14) for index, value in enumerate(row.asr)
            ]
            label = f"{row.white_box} / {row.attack}"
            if row.excluded:
                label += f" ({row.excluded} excluded)"
            lines.append(label.ljust(40) + " ".join(cells))
    if report.matrices():
        lines.append("")
        lines.append("Average ASR (%): attack, white-box, black-box")
        for attack, (white, black) in report.average_asr().items():
            lines.append(f"{attack.ljust(24)} {_percent(white)} {_percent(black)}")
    for matrix in report.correlations:
        lines.append("")
        lines.append(f"Spearman correlation ({matrix.method}, {matrix.clip_count} clips)")
        for index, model_id in enumerate(matrix.model_ids):
            lines.append(model_id.ljust(24) + " ".join(f"{v:7.3f}" for v in matrix.matrix[index]))
    if report.shift_loss:
        lines.append("")
        lines.append("Mean loss under temporal translation")
        for profile in report.shift_loss:
            lines.append(profile.model_id.ljust(24) + " ".join(f"{v:7.3f}" for v in profile.mean_losses))
    for note in report.notes:
        lines.append("")
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def report_document(report: Report) -> Dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "provenance": report.provenance,
        "transfer": report.transfer.to_dict() if report.transfer is not None else None,
        "ablations": OrderedDict((name, matrix.to_dict()) for name, matrix in report.ablations.items()),
        "correlations": [matrix.to_dict() for matrix in report.correlations],
        "shift_loss": [profile.to_dict() for profile in report.shift_loss],
        "average_asr": [
            {"attack": attack, "white_box_asr": white, "black_box_asr": black}
            for attack, (white, black) in report.average_asr().items()
        ],
        "tables": OrderedDict((table.name, table.to_dict()) for table in report_tables(report)),
        "notes": list(report.notes),
    }


def emit_report(report: Report, directory: str) -> List[str]:
    """
    Write the report bundle into `directory`, every file atomically.

    Returns:
        List[str] -- paths written, the bundle first and run_metadata.json last.
    """
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise OSError(f"Cannot create report directory {directory}: {e}")
    files = [(REPORT_FILE, json.dumps(report_document(report), sort_keys=True, indent=2) + "\n")]
    files.extend((f"{table.name}.csv", render_csv(table)) for table in report_tables(report))
    files.append((SUMMARY_FILE, render_summary(report)))
    files.append((RUN_METADATA_FILE, json.dumps({"wall_clock_seconds": report.wall_clock_seconds}, indent=2) + "\n"))

    written = []
    for name, text in files:
        path = os.path.join(directory, name)
        try:
            write_atomic(path, text.encode("utf-8"))
        except OSError as e:
            raise OSError(f"Failed to write {path}: {e}")
        written.append(path)
    logger.info(f"Wrote report bundle of {len(written)} files to {directory}.")
    return written
