"""Single-node HTTP front end for real-time candidate retrieval.

Endpoints::

    POST /event                       {"user", "item", "ts", "signal"}
    GET  /retrieve/{user}?now=<ts>&n=<count>
    GET  /health

Every valid event marks the item as shown to that user. Positive signals
also enter the live engagement buffer. A request that gets its 200 back is
visible to every retrieval issued after it. The user index is held by
reference and replaced atomically by :meth:`RetrievalService.swap_index`;
a retrieval in flight keeps the index it started with.
"""
from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from . import ripple, snapshot
from .annindex import UserIndex
from .catalog import Catalog
from .engagement import EngagementBuffer, EngagementError, EngagementEvent, ImpressionLog, Signal
from .socialgraph import SocialGraph

log = logging.getLogger(__name__)

MAX_BODY = 1 << 16


class RequestError(ValueError):
    """Maps to an HTTP error status."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _int_field(body: dict, key: str) -> int:
    v = body.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise RequestError(400, f"{key!r} must be an integer")
    return v


class RetrievalService:
    def __init__(self, graph: SocialGraph, catalog: Catalog, index: UserIndex,
                 config: ripple.RippleConfig = ripple.RippleConfig(),
                 buffer: EngagementBuffer | None = None, impressions: ImpressionLog | None = None):
        config.validate()
        if graph.num_users is None:
            raise ValueError("the service needs a graph with a fixed user population")
        self.graph = graph
        self.catalog = catalog
        self.config = config
        self.buffer = buffer or EngagementBuffer(config.max_item_age, config.max_item_age)
        self.impressions = impressions or ImpressionLog()
        self._index = index
        self._swap = threading.Lock()

    @property
    def num_users(self) -> int:
        return int(self.graph.num_users)

    @property
    def index(self) -> UserIndex:
        return self._index

    def swap_index(self, index: UserIndex) -> UserIndex:
        """Install a new index; returns the one it replaced."""
        with self._swap:
            old, self._index = self._index, index
        return old

    # -- writes ---------------------------------------------------------
    def ingest(self, body) -> EngagementEvent:
        if not isinstance(body, dict):
            raise RequestError(400, "event must be a JSON object")
        extra = set(body) - {"user", "item", "ts", "signal"}
        if extra:
            raise RequestError(400, f"unexpected fields {sorted(extra)}")
        user, item = _int_field(body, "user"), _int_field(body, "item")
        if not 0 <= user < self.num_users:
            raise RequestError(400, f"unknown user {user}")
        if not 0 <= item < len(self.catalog):
            raise RequestError(400, f"unknown item {item}")
        ts = body.get("ts")
        if isinstance(ts, bool) or not isinstance(ts, (int, float)) or not math.isfinite(ts):
            raise RequestError(400, "'ts' must be a finite number")
        raw_sig = body.get("signal")
        if isinstance(raw_sig, bool) or not isinstance(raw_sig, (str, int)):
            raise RequestError(400, "'signal' must be a label such as 'like' or its integer code")
        try:
            sig = Signal.parse(raw_sig)
        except (ValueError, KeyError, TypeError):
            raise RequestError(400, f"invalid signal {body.get('signal')!r}") from None
        created = float(self.catalog.created[item])
        if ts < created:
            raise RequestError(400, f"event at {ts} precedes creation of item {item}")
        ev = EngagementEvent(user, item, float(ts), sig)
        if sig in self.buffer.positive:
            try:
                self.buffer.record(ev, created)
            except EngagementError as exc:
                raise RequestError(400, str(exc)) from None
        self.impressions.mark_shown(user, item, float(ts))
        return ev

    # -- reads ----------------------------------------------------------
    def retrieve(self, user: int, now: float, n: int | None = None) -> list[dict]:
        if not 0 <= user < self.num_users:
            raise RequestError(404, f"unknown user {user}")
        cfg = self.config if n is None else replace(self.config, N_out=n)
        idx = self._index
        cands = ripple.retrieve_scored(user, now, self.graph, self.catalog, idx, self.buffer,
                                       self.impressions, cfg)
        return [{"item": c.item, "score": c.score, "source": c.source} for c in cands]

    # -- persistence ----------------------------------------------------
    def snapshot(self, state_dir):
        return snapshot.save(snapshot.ServingState(self.buffer, self.impressions, self._index), state_dir)

    @classmethod
    def restore(cls, state_dir, graph: SocialGraph, catalog: Catalog,
                config: ripple.RippleConfig = ripple.RippleConfig()) -> "RetrievalService":
        st = snapshot.load(state_dir)
        if st.index is None:
            raise snapshot.SnapshotError("snapshot has no index")
        return cls(graph, catalog, st.index, config, st.buffer, st.log)


def _parse_retrieve(path: str, query: str) -> tuple[int, float, int | None]:
    tail = path[len("/retrieve/"):]
    try:
        user = int(tail)
    except ValueError:
        raise RequestError(400, f"bad user id {tail!r}") from None
    q = parse_qs(query, keep_blank_values=True)
    if "now" not in q or not q["now"][0]:
        raise RequestError(400, "query parameter 'now' is required")
    try:
        now = float(q["now"][0])
        n = int(q["n"][0]) if q.get("n", [""])[0] else None
    except ValueError:
        raise RequestError(400, "'now' must be a number and 'n' an integer") from None
    if not math.isfinite(now):
        raise RequestError(400, "'now' must be finite")
    if n is not None and n < 1:
        raise RequestError(400, "'n' must be >= 1")
    return user, now, n


def make_handler(service: RetrievalService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

        def _send(self, status: int, payload) -> None:
            data = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _fail(self, exc: RequestError) -> None:
            self._send(exc.status, {"error": str(exc)})

        def do_GET(self):
            url = urlsplit(self.path)
            try:
                if url.path == "/health":
                    self._send(200, {"status": "ok", "users": service.num_users})
                elif url.path.startswith("/retrieve/"):
                    user, now, n = _parse_retrieve(url.path, url.query)
                    self._send(200, service.retrieve(user, now, n))
                else:
                    raise RequestError(404, f"no route {url.path}")
            except RequestError as exc:
                self._fail(exc)

        def do_POST(self):
            url = urlsplit(self.path)
            try:
                if url.path != "/event":
                    raise RequestError(404, f"no route {url.path}")
                try:
                    length = int(self.headers.get("Content-Length", ""))
                except ValueError:
                    raise RequestError(411, "Content-Length required") from None
                if not 0 <= length <= MAX_BODY:
                    raise RequestError(413, "body too large")
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw)
                except (json.JSONDecodeError, UnicodeDecodeError):
                    raise RequestError(400, "malformed JSON body") from None
                ev = service.ingest(body)
                self._send(200, {"accepted": True, "user": ev.user, "item": ev.item,
                                 "signal": Signal(ev.signal).label})
            except RequestError as exc:
                self._fail(exc)

    return Handler


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 256  # the stdlib default of 5 drops bursts of writers


def make_server(service: RetrievalService, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    """Bound but not yet serving; port 0 picks a free port."""
    return _Server((host, port), make_handler(service))
