from __future__ import annotations

import logging
import queue
import threading
from typing import Any, Dict, List

logger = logging.getLogger(__name__)

# Per session id (hex), the subscriber queues listening for lifecycle events.
_queues: Dict[str, List[queue.Queue]] = {}

# Latest event per stage ("init", "checkpoint", "crash", ...) for each session.
_status: Dict[str, Dict[str, Dict[str, Any]]] = {}

_lock = threading.Lock()


def subscribe(session: str) -> queue.Queue:
    q: queue.Queue = queue.Queue()
    with _lock:
        _queues.setdefault(session, []).append(q)
        _status.setdefault(session, {})
        count = len(_queues[session])
    logger.debug("[EventBus] new subscriber for %s (total %d)", session, count)
    return q


def publish(session: str, event: Dict[str, Any]) -> None:
    """Record the event as the stage's latest status and push it to every subscriber."""
    stage = event.get("stage")
    with _lock:
        if stage:
            _status.setdefault(session, {})[stage] = event
        subs = list(_queues.get(session, []))
    logger.debug("[EventBus] %s %s -> %d subscribers", session, stage, len(subs))
    for q in subs:
        try:
            q.put_nowait(event)
        except queue.Full:
            logger.warning("[EventBus] queue for %s full; event dropped", session)


def get_status(session: str) -> Dict[str, Dict[str, Any]]:
    with _lock:
        return dict(_status.get(session, {}))


def drain(q: queue.Queue) -> List[Dict[str, Any]]:
    out = []
    while True:
        try:
            out.append(q.get_nowait())
        except queue.Empty:
            return out


def unsubscribe(session: str, q: queue.Queue | None = None) -> None:
    with _lock:
        if q is None:
            _queues.pop(session, None)
            return
        subs = _queues.get(session)
        if subs and q in subs:
            subs.remove(q)
            if not subs:
                _queues.pop(session, None)
        else:
            logger.warning("[EventBus] unsubscribe for %s: queue not found", session)


def clear(session: str) -> None:
    with _lock:
        _queues.pop(session, None)
        _status.pop(session, None)
