"""Package that runs the document-level speech translation pipeline."""

import structlog

docia_logger = structlog.get_logger("docia_controller")

trace_logger = structlog.get_logger("docia_controller.trace")
