"""Spectrum-sensing workbench for shared-band radar detection."""
