#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
评估指标数据模型
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import pandas as pd

logger = logging.getLogger(__name__)

GAP = "-"


def column_name(lang: str) -> str:
    """报表列名：英文列对应 FUNSD"""
    return "FUNSD-EN" if lang.lower() == "en" else lang.upper()


@dataclass
class PRF:
    """微平均的精确率、召回率与 F1"""
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> 'PRF':
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(precision=p, recall=r, f1=f1, tp=tp, fp=fp, fn=fn)

    @classmethod
    def from_f1(cls, f1: float) -> 'PRF':
        """只有 F1 的单元格（例如参考结果）"""
        return cls(precision=f1, recall=f1, f1=f1)

    def __add__(self, other: 'PRF') -> 'PRF':
        return PRF.from_counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'precision': self.precision,
            'recall': self.recall,
            'f1': self.f1,
            'tp': self.tp,
            'fp': self.fp,
            'fn': self.fn,
        }


@dataclass
class MetricReport:
    """
    按任务与语言组织的指标报表

    cells[task][lang] 为 PRF，缺失单元格为 None；Avg 是现有单元格 F1 的非加权平均
    """
    regime: str
    langs: List[str]
    cells: Dict[str, Dict[str, Optional[PRF]]] = field(default_factory=dict)

    @property
    def tasks(self) -> List[str]:
        return list(self.cells)

    def average(self, task: str) -> Optional[float]:
        present = [c.f1 for c in self.cells.get(task, {}).values() if c is not None]
        if not present:
            return None
        return sum(present) / len(present)

    def missing(self) -> List[str]:
        return [f"{task}/{lang}" for task, row in self.cells.items()
                for lang in self.langs if row.get(lang) is None]

    def to_frame(self) -> pd.DataFrame:
        """任务为行、语言为列（外加 Avg）的 F1 表"""
        rows = []
        for task in self.tasks:
            row = {'task': task}
            for lang in self.langs:
                cell = self.cells[task].get(lang)
                row[column_name(lang)] = cell.f1 if cell is not None else None
            row['Avg'] = self.average(task)
            rows.append(row)
        columns = ['task'] + [column_name(l) for l in self.langs] + ['Avg']
        return pd.DataFrame(rows, columns=columns).set_index('task')

    def render_table(self, digits: int = 4) -> str:
        """对齐的文本表格，缺失单元格显示为 -"""
        frame = self.to_frame()
        header = ['', *frame.columns]
        lines = [header]
        for task, values in frame.iterrows():
            cells = [GAP if pd.isna(v) else f"{v:.{digits}f}" for v in values]
            lines.append([str(task), *cells])
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        rendered = [f"regime: {self.regime}"]
        for line in lines:
            rendered.append("  ".join(text.rjust(width) for text, width in zip(line, widths)))
        return "\n".join(rendered)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, na_rep=GAP, float_format="%.6f")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'regime': self.regime,
            'langs': list(self.langs),
            'cells': {
                task: {lang: (cell.to_dict() if cell else None) for lang, cell in row.items()}
                for task, row in self.cells.items()
            },
            'avg': {task: self.average(task) for task in self.tasks},
        }
