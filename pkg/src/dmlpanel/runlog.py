import time
from collections import defaultdict
from pathlib import Path

RUN_LOG_NAME = "run.log"


def _ts() -> str:
	return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


class RunLog:
	"""Append-only event file: one `[timestamp] EVENT state=... key=... attempt=n k=v` line per event."""

	def __init__(self, out_dir: Path, name: str = RUN_LOG_NAME) -> None:
		self.path = Path(out_dir) / name
		self.path.parent.mkdir(parents=True, exist_ok=True)
		self._counters: dict[str, int] = defaultdict(int)

	def append(self, line: str) -> None:
		with open(self.path, "a", encoding="utf-8") as f:
			f.write(f"[{_ts()}] {line}\n")

	def event(self, state: str, key: str, **fields: object) -> None:
		self._counters[key] += 1
		kv = " ".join(f"{k}={fields[k]}" for k in fields)
		self.append(f"EVENT state={state} key={key} attempt={self._counters[key]} {kv}".rstrip())
