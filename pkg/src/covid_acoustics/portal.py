"""Leaderboard scoring service.

The service holds the blind-test labels for each track, validates uploaded
score files, charges one ticket per accepted submission (15 per team and
track by default), scores against the labels and ranks teams.

Every accepted submission is appended to a JSON-lines journal; the board is
always derived from that history, so replaying a journal reproduces it.
Labels never leave the service, only aggregate metrics do.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable
from urllib.parse import parse_qs, urlparse

from .errors import (
    ExtraFiles,
    MalformedCsv,
    MissingFiles,
    OutOfRangeScore,
    SubmissionRejected,
    TicketLimitExceeded,
    UnknownTeam,
    UnknownTrack,
)
from .inference_fusion import parse_scores
from .metrics import EvalResult, evaluate

TRACKS = ("breathing", "cough", "speech", "fusion")
TICKET_LIMIT = 15


def read_labels(path) -> dict[str, int]:
    """Label CSV: ``file_id,label`` with label 0 or 1."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            label = int(row["label"])
            if label not in (0, 1):
                raise ValueError(f"{path}: label must be 0 or 1, got {label}")
            out[row["file_id"]] = label
    return out


def write_labels(labels: dict[str, int], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file_id", "label"])
        for k, v in labels.items():
            w.writerow([k, int(v)])


@dataclass
class TrackData:
    labels: dict[str, int]
    test_ids: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.test_ids:
            self.test_ids = frozenset(self.labels)
        if set(self.test_ids) - set(self.labels):
            raise ValueError("test list contains files without labels")


@dataclass
class PortalConfig:
    tracks: dict[str, TrackData]
    journal_path: Path | None = None
    ticket_limit: int = TICKET_LIMIT
    teams: frozenset[str] | None = None  # None: any team may submit

    @classmethod
    def from_file(cls, path) -> "PortalConfig":
        """JSON: ``{"tracks": {name: {"labels": csv, "test_list": txt?}},
        "journal": path, "ticket_limit": 15, "teams": [...]}``."""
        path = Path(path)
        raw = json.loads(path.read_text())
        tracks = {}
        for name, spec in raw["tracks"].items():
            labels = read_labels(path.parent / spec["labels"])
            ids = frozenset()
            if spec.get("test_list"):
                ids = frozenset(line.strip() for line in (path.parent / spec["test_list"]).read_text().splitlines()
                                if line.strip())
            tracks[name] = TrackData(labels, ids)
        journal = raw.get("journal")
        return cls(
            tracks=tracks,
            journal_path=(path.parent / journal) if journal else None,
            ticket_limit=int(raw.get("ticket_limit", TICKET_LIMIT)),
            teams=frozenset(raw["teams"]) if raw.get("teams") else None,
        )


@dataclass(frozen=True)
class JournalRecord:
    team: str
    track: str
    ticket: int
    received_at: str
    digest: str
    auc: float
    sens_at_95spec: float
    n_pos: int
    n_neg: int


@dataclass
class LeaderboardRow:
    team_id: str
    track: str
    best_auc: float
    best_sens_at_95spec: float
    n_submissions: int
    achieved_at: str = ""


@dataclass
class SubmissionResult:
    result: EvalResult
    ticket: int
    rank: int
    tickets_left: int

    def to_dict(self) -> dict:
        return {**self.result.to_dict(), "ticket": self.ticket, "rank": self.rank,
                "tickets_left": self.tickets_left}


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def build_board(history: list[JournalRecord], track: str) -> list[LeaderboardRow]:
    """Rank teams by best AUC, then sensitivity at 95% specificity, then earliest time.

    A team's best submission is the one with the highest (AUC, sensitivity);
    ties keep the earlier submission.
    """
    rows: dict[str, LeaderboardRow] = {}
    for rec in history:
        if rec.track != track:
            continue
        row = rows.get(rec.team)
        if row is None:
            rows[rec.team] = LeaderboardRow(rec.team, track, rec.auc, rec.sens_at_95spec, 1, rec.received_at)
            continue
        row.n_submissions += 1
        if (rec.auc, rec.sens_at_95spec) > (row.best_auc, row.best_sens_at_95spec):
            row.best_auc, row.best_sens_at_95spec, row.achieved_at = rec.auc, rec.sens_at_95spec, rec.received_at
    return sorted(rows.values(), key=lambda r: (-r.best_auc, -r.best_sens_at_95spec, r.achieved_at, r.team_id))


class Portal:
    def __init__(self, config: PortalConfig, clock: Callable[[], str] = _utcnow):
        self.config = config
        self.clock = clock
        self._lock = threading.Lock()
        self._history: list[JournalRecord] = []
        path = config.journal_path
        if path is not None and Path(path).exists():
            self._history = load_journal(path)

    # -- validation

    def _track(self, track: str) -> TrackData:
        if track not in self.config.tracks:
            raise UnknownTrack(f"unknown track {track!r}")
        return self.config.tracks[track]

    def validate_submission(self, team: str, track: str, text: str) -> dict[str, float]:
        """Parsed scores, or a SubmissionRejected subclass describing the problem."""
        data = self._track(track)
        try:
            scores = parse_scores(text)
        except ValueError as exc:
            raise MalformedCsv(str(exc)) from exc
        missing = data.test_ids - scores.keys()
        if missing:
            raise MissingFiles(missing)
        extra = scores.keys() - data.test_ids
        if extra:
            raise ExtraFiles(extra)
        bad = [f for f, s in scores.items() if not (math.isfinite(s) and 0.0 <= s <= 1.0)]
        if bad:
            raise OutOfRangeScore(f"{len(bad)} score(s) outside [0, 1], e.g. {bad[0]}={scores[bad[0]]}")
        return scores

    # -- submission

    def tickets_used(self, team: str, track: str) -> int:
        return sum(1 for r in self._history if r.team == team and r.track == track)

    def submit(self, team: str, track: str, text: str) -> SubmissionResult:
        if self.config.teams is not None and team not in self.config.teams:
            raise UnknownTeam(f"team {team!r} is not registered")
        scores = self.validate_submission(team, track, text)
        labels = self._track(track).labels
        result = evaluate(scores, {f: labels[f] for f in self._track(track).test_ids})
        with self._lock:
            used = self.tickets_used(team, track)
            if used >= self.config.ticket_limit:
                raise TicketLimitExceeded(f"{team} has used all {self.config.ticket_limit} tickets for {track}")
            rec = JournalRecord(
                team=team, track=track, ticket=used + 1, received_at=self.clock(),
                digest=hashlib.sha256(text.encode("utf-8")).hexdigest(),
                auc=result.auc, sens_at_95spec=result.sensitivity_at_95_specificity,
                n_pos=result.n_positive, n_neg=result.n_negative,
            )
            if self.config.journal_path is not None:
                with open(self.config.journal_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
                    fh.flush()
            self._history.append(rec)
            board = build_board(self._history, track)
        rank = next(i for i, row in enumerate(board, start=1) if row.team_id == team)
        return SubmissionResult(result, rec.ticket, rank, self.config.ticket_limit - rec.ticket)

    # -- queries

    def leaderboard(self, track: str) -> list[LeaderboardRow]:
        self._track(track)
        with self._lock:
            snapshot = list(self._history)
        return build_board(snapshot, track)

    def history(self, team: str) -> list[JournalRecord]:
        with self._lock:
            return [r for r in self._history if r.team == team]


def load_journal(path) -> list[JournalRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(JournalRecord(**json.loads(line)))
    return out


def replay_board(path, track: str) -> list[LeaderboardRow]:
    return build_board(load_journal(path), track)


# --------------------------------------------------------------------- HTTP

def make_handler(portal: Portal):
    class Handler(BaseHTTPRequestHandler):
        def _send(self, status, payload):
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):  # keep test output quiet
            pass

        def _query(self):
            url = urlparse(self.path)
            return url.path, {k: v[0] for k, v in parse_qs(url.query).items()}

        def do_POST(self):
            route, q = self._query()
            if route != "/submit":
                return self._send(HTTPStatus.NOT_FOUND, {"error": "not_found"})
            length = int(self.headers.get("Content-Length", 0))
            text = self.rfile.read(length).decode("utf-8", errors="replace")
            try:
                res = portal.submit(q.get("team", ""), q.get("track", ""), text)
            except SubmissionRejected as exc:
                return self._send(HTTPStatus.BAD_REQUEST, {"error": exc.code, "detail": str(exc)})
            except TicketLimitExceeded as exc:
                return self._send(HTTPStatus.TOO_MANY_REQUESTS, {"error": "ticket_limit_exceeded", "detail": str(exc)})
            except (UnknownTeam, UnknownTrack) as exc:
                return self._send(HTTPStatus.NOT_FOUND, {"error": type(exc).__name__, "detail": str(exc)})
            self._send(HTTPStatus.OK, res.to_dict())

        def do_GET(self):
            route, q = self._query()
            try:
                if route == "/board":
                    rows = portal.leaderboard(q.get("track", ""))
                    return self._send(HTTPStatus.OK, [asdict(r) for r in rows])
                if route == "/history":
                    recs = portal.history(q.get("team", ""))
                    return self._send(HTTPStatus.OK, [asdict(r) for r in recs])
            except UnknownTrack as exc:
                return self._send(HTTPStatus.NOT_FOUND, {"error": "UnknownTrack", "detail": str(exc)})
            self._send(HTTPStatus.NOT_FOUND, {"error": "not_found"})

    return Handler


def serve(portal: Portal, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    """Bound server; call ``serve_forever()`` on it (or run it in a thread)."""
    return ThreadingHTTPServer((host, port), make_handler(portal))
