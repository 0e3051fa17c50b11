"""
Logger Module

This module provides the run logger. Lines are printed to the console and
buffered; flush() appends the buffer to the run-log file of the current
output directory. Terminal output (stdout/stderr) can be captured into the
same log while a pipeline runs.
"""

import sys
import threading
from datetime import datetime


class RunLogger:
    def __init__(self, sink_path=None):
        self.sink_path = sink_path
        self.buffer = []
        self.lock = threading.Lock()
        self.original_stdout = sys.stdout
        self.original_stderr = sys.stderr
        self.is_capturing = False
        self.quiet = False

        # Flush once this many lines are pending
        self.MAX_BUFFER_LINES = 200

        # Patterns kept out of the log file (still printed to console)
        self.ignore_patterns = ["[TRACE]"]

    def set_sink(self, sink_path):
        """Point the logger at a new run-log file, flushing anything pending first"""
        self.flush()
        self.sink_path = sink_path

    def start_capturing(self):
        """Start capturing stdout and stderr"""
        if self.is_capturing:
            return

        self.is_capturing = True
        self.original_stdout = sys.stdout
        self.original_stderr = sys.stderr
        sys.stdout = self._StreamWrapper(self, self.original_stdout, "stdout")
        sys.stderr = self._StreamWrapper(self, self.original_stderr, "stderr")

    def stop_capturing(self):
        """Stop capturing and restore original streams"""
        if not self.is_capturing:
            return
        sys.stdout.flush()
        sys.stderr.flush()
        sys.stdout = self.original_stdout
        sys.stderr = self.original_stderr
        self.is_capturing = False
        self.flush()

    def log(self, text, level="INFO"):
        """Log a message directly"""
        timestamp = datetime.now().strftime("%H:%M:%S")
        formatted = f"[{timestamp}] [{level}] {text}"

        if not self.quiet:
            print(formatted, file=self.original_stdout)

        if any(pattern in text for pattern in self.ignore_patterns):
            return
        self._add_to_buffer(formatted)

    def warning(self, text):
        self.log(text, "WARNING")

    def error(self, text):
        self.log(text, "ERROR")

    def _add_to_buffer(self, text):
        """Add text to buffer in a thread-safe way"""
        if not self.sink_path:
            return

        with self.lock:
            self.buffer.append(text.rstrip("\n"))
            pending = len(self.buffer)
        if pending >= self.MAX_BUFFER_LINES:
            self.flush()

    def flush(self):
        """Append buffered lines to the run-log file"""
        with self.lock:
            if not self.buffer or not self.sink_path:
                self.buffer.clear()
                return
            messages = list(self.buffer)
            self.buffer.clear()

        try:
            with open(self.sink_path, "a", encoding="utf-8") as fh:
                fh.write("\n".join(messages) + "\n")
        except OSError as e:
            # Don't recurse into the logger
            print(f"Failed to write run log {self.sink_path}: {e}", file=self.original_stderr)

    class _StreamWrapper:
        """Wrapper for stdout/stderr to capture output"""
        def __init__(self, logger, original_stream, stream_name):
            self.logger = logger
            self.original_stream = original_stream
            self.stream_name = stream_name
            self.line_buffer = ""

        def write(self, text):
            self.original_stream.write(text)

            if not text:
                return

            self.line_buffer += text

            if '\n' in self.line_buffer:
                lines = self.line_buffer.split('\n')
                label = "[TERMINAL]" if self.stream_name == "stdout" else "[ERROR]"
                for line in lines[:-1]:
                    if self.stream_name == "stdout" and any(p in line for p in self.logger.ignore_patterns):
                        continue
                    self.logger._add_to_buffer(f"{label} {line}")

                # Keep remainder
                self.line_buffer = lines[-1]

        def flush(self):
            self.original_stream.flush()
            if self.line_buffer:
                label = "[TERMINAL]" if self.stream_name == "stdout" else "[ERROR]"
                self.logger._add_to_buffer(f"{label} {self.line_buffer}")
                self.line_buffer = ""

        def isatty(self):
            return self.original_stream.isatty()


# Global logger instance
logger = RunLogger()
