"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.
"""

import sys
from collections.abc import Mapping

from opentelemetry import trace
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter
from opentelemetry.semconv.resource import ResourceAttributes
from opentelemetry.util.types import AttributeValue

SERVICE_NAME = "ncurves"

tracer = trace.get_tracer(SERVICE_NAME)


def choose_span(name: str, attributes: Mapping[str, AttributeValue] | None = None):
    """
    Choose the span to record work in. A non-recording current span is reused so
    that no recording starts when nobody asked for traces; otherwise a new child
    span of the current span is started.

    :param name: name of span
    :param attributes: attributes attached to a newly started span
    :return: current non-recording span or a new span
    """
    current_span = trace.get_current_span()
    if not current_span.is_recording():
        return current_span
    return tracer.start_span(name=name, attributes=dict(attributes or {}))


def configure_tracing(service_version: str | None = None) -> TracerProvider:
    """Install a tracer provider that prints finished spans to stderr."""
    attributes = {ResourceAttributes.SERVICE_NAME: SERVICE_NAME}
    if service_version:
        attributes[ResourceAttributes.SERVICE_VERSION] = service_version
    provider = TracerProvider(resource=Resource.create(attributes))
    provider.add_span_processor(BatchSpanProcessor(ConsoleSpanExporter(out=sys.stderr)))
    trace.set_tracer_provider(provider)
    return provider


__all__ = ["tracer", "choose_span", "configure_tracing"]
