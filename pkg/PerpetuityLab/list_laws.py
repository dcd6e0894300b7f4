#!/usr/bin/env python

"""
Print the built-in coefficient laws.

For each law kind the catalog shows its parameters, the closed form it is
anchored on and a one-line description.

Example Usage
-------------
>>> PerpetuityLab laws

Logging
-------
Logs are written to `PerpetuityLab/logging/perpetuitylab.log`.
"""

from PerpetuityLab.accessories.coefficient_laws import LAW_CATALOG, LAW_KINDS
from PerpetuityLab.settings import get_logger

# Set up logger
logger = get_logger(__name__)


def list_builtin_laws():
    """
    Return the law catalog in display order.

    Returns
    -------
    list of dict
        ``kind``, ``params``, ``anchor`` and ``description`` per law.
    """
    return [{"kind": kind, **LAW_CATALOG[kind]} for kind in LAW_KINDS]


def format_catalog(catalog):
    """Render the catalog as plain text, one block per law."""
    lines = []
    for entry in catalog:
        lines.append(entry["kind"])
        lines.append(f"    anchor: {entry['anchor']}")
        lines.append(f"    {entry['description']}")
        if entry["params"]:
            lines.append("    parameters:")
            for name, doc in entry["params"].items():
                lines.append(f"        {name:<8} {doc}")
        else:
            lines.append("    parameters: none")
        lines.append("")
    return "\n".join(lines)


def main():
    """
    Print the catalog of built-in laws.

    Returns
    -------
    int
        Always 0.
    """
    logger.info("Command executed: laws")
    print(format_catalog(list_builtin_laws()))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
