"""Test-suite alias for the instruction-fuzz drivers in mxsim.verify."""

from mxsim.verify import (  # noqa: F401
    SUFFIXES,
    bits_equal_mod_nan,
    pack_elements,
    random_case,
    reference_lanes,
    run_vmxdotp_case,
)
