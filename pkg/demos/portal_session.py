"""A scoring-portal session: tickets, rejections, the leaderboard and replay.

Run: python demos/portal_session.py
"""
import tempfile
from pathlib import Path

import numpy as np

from covid_acoustics.errors import MissingFiles, TicketLimitExceeded
from covid_acoustics.inference_fusion import format_scores
from covid_acoustics.portal import Portal, PortalConfig, TrackData, replay_board

rng = np.random.default_rng(0)
labels = {f"test{k:03d}": int(rng.random() < 0.15) for k in range(200)}
journal = Path(tempfile.mkdtemp()) / "journal.jsonl"
portal = Portal(PortalConfig({"cough": TrackData(labels)}, journal))


def submission(skill):
    return format_scores({f: float(np.clip(skill * y + (1 - skill) * rng.random(), 0, 1))
                          for f, y in labels.items()})


# a file with a missing row is refused and costs nothing
partial = "file_id,score\ntest000,0.5\n"
try:
    portal.submit("alpha", "cough", partial)
except MissingFiles as exc:
    print("rejected:", exc.code, "| tickets used:", portal.tickets_used("alpha", "cough"))

for team, skill in (("alpha", 0.2), ("beta", 0.4), ("alpha", 0.35)):
    res = portal.submit(team, "cough", submission(skill))
    print(team, res.to_dict())

for _ in range(13):
    portal.submit("alpha", "cough", submission(0.1))
try:
    portal.submit("alpha", "cough", submission(0.9))
except TicketLimitExceeded as exc:
    print("16th ticket:", exc)

for row in portal.leaderboard("cough"):
    print(row)
print("replay identical:", replay_board(journal, "cough") == portal.leaderboard("cough"))
