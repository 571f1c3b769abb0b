"""Line-delimited JSON protocol to an external model child process.

One request line on the child's stdin, one response line on its stdout.
A timeout or malformed line kills the child; the next request respawns it,
so a single bad tile never poisons the rest of a run.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading

from .errors import BridgeError

_EOF = object()


class LineBridge:
    def __init__(self, cmd: list[str], timeout: float = 10.0):
        if not cmd:
            raise ValueError("empty bridge command")
        self.cmd = list(cmd)
        self.timeout = float(timeout)
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._next_id = 0

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
            self._lines = queue.Queue()
            thread = threading.Thread(
                target=self._pump, args=(self._proc, self._lines), daemon=True
            )
            thread.start()
        return self._proc

    @staticmethod
    def _pump(proc: subprocess.Popen, lines: queue.Queue) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            lines.put(line)
        lines.put(_EOF)

    def _kill(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None

    def request(self, payload: dict) -> dict:
        """Send one request and wait for its matching response line."""
        self._next_id += 1
        payload = dict(payload, id=self._next_id)
        proc = self._ensure_proc()
        lines = self._lines
        try:
            assert proc.stdin is not None
            proc.stdin.write(json.dumps(payload) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._kill()
            raise BridgeError(f"child process not writable: {exc}") from exc
        try:
            line = lines.get(timeout=self.timeout)
        except queue.Empty:
            self._kill()
            raise BridgeError(f"timeout after {self.timeout}s waiting for response") from None
        if line is _EOF:
            self._kill()
            raise BridgeError("child process exited before responding")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            self._kill()
            raise BridgeError(f"malformed response line: {line!r}") from exc
        if not isinstance(response, dict) or response.get("id") != payload["id"]:
            self._kill()
            raise BridgeError(f"response id mismatch: {response!r}")
        return response

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            try:
                assert self._proc.stdin is not None
                self._proc.stdin.close()
            except OSError:
                pass
        self._kill()

    def __enter__(self) -> "LineBridge":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
