# Core infrastructure: settings, errors, crypto primitives, the sealed store and the lifecycle event bus.
