from __future__ import annotations

from typing import Optional

from ..core.exceptions import friendly_message
from .aoadmm import TraceRecord, multi_init_fit
from .config import SolverConfig
from .problem import ProblemSpec

# Optional PySide6 support (pip install cmtf-fusion[qt])
QT_AVAILABLE = True
try:
    from PySide6 import QtCore
except Exception:
    QT_AVAILABLE = False


if QT_AVAILABLE:

    class WorkerSignals(QtCore.QObject):
        finished = QtCore.Signal(object)  # FitResult
        error = QtCore.Signal(str)        # friendly message
        progress = QtCore.Signal(dict)    # TraceRecord.to_dict()

    class FitWorker(QtCore.QThread):
        """
        Thread that runs ``multi_init_fit`` off the GUI thread.

        Emits ``progress`` per outer iteration, then either ``finished`` with
        the FitResult or ``error`` with a short message.
        """
        def __init__(self, problem: ProblemSpec, config: Optional[SolverConfig] = None, parent=None):
            super().__init__(parent)
            self.problem = problem
            self.config = config or SolverConfig()
            self.signals = WorkerSignals()
            self.result = None

        def _report(self, record: TraceRecord) -> None:
            self.signals.progress.emit(record.to_dict())

        def run(self):
            try:
                self.result = multi_init_fit(self.problem, self.config, progress=self._report)
            except Exception as e:
                self.signals.error.emit(friendly_message(e))
                return
            self.signals.finished.emit(self.result)
