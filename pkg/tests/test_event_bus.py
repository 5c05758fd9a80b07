from backend.app.core import event_bus


def test_publish_reaches_every_subscriber():
    a = event_bus.subscribe("s1")
    b = event_bus.subscribe("s1")
    event_bus.publish("s1", {"stage": "checkpoint", "index": 1})
    event_bus.publish("s1", {"stage": "checkpoint", "index": 2})
    assert [e["index"] for e in event_bus.drain(a)] == [1, 2]
    assert [e["index"] for e in event_bus.drain(b)] == [1, 2]
    assert event_bus.get_status("s1")["checkpoint"]["index"] == 2
    event_bus.clear("s1")
    assert event_bus.get_status("s1") == {}


def test_unsubscribed_queue_stops_receiving():
    q = event_bus.subscribe("s2")
    event_bus.unsubscribe("s2", q)
    event_bus.publish("s2", {"stage": "crash"})
    assert event_bus.drain(q) == []
    assert event_bus.get_status("s2")["crash"] == {"stage": "crash"}
    event_bus.clear("s2")


def test_publish_without_subscribers_only_records_status():
    event_bus.publish("s3", {"stage": "init"})
    assert set(event_bus.get_status("s3")) == {"init"}
    event_bus.clear("s3")
