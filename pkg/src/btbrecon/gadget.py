"""Probe gadget construction.

A gadget is B unconditional indirect branches laid out at an N-byte
stride: block k holds `adr x0, next<k+1>` at offset k*N and `br x0` at
k*N + 4, padded with nops; the final target is a lone `ret`. Because N is
a power of two, every branch PC agrees on bits [0 .. log2(N)-1], which is
the lever the whole probing methodology rests on.

This module produces the branch-address trace for simulation and emits
GNU-assembler aarch64 text for on-target runs.
"""

from __future__ import annotations

from dataclasses import dataclass

MIN_STRIDE = 8          # adr + br need two 4-byte instruction slots
MIN_SIM_STRIDE = 4      # simulator-only probes may go one step finer
BRANCH_OFFSET = 4       # br follows the address materialization
DEFAULT_BASE = 0x4000_0000
DEFAULT_ALIGN_EXP = 21  # base alignment fixes low PC bits for all strides up to 2^21
ENTRY_SYMBOL = "btb_probe"

_ADR_REACH = 1 << 20        # adr spans +/-1 MiB; at this stride switch to adrp
_MAX_EXPLICIT_NOPS = 30     # beyond this, alignment directives pad instead


@dataclass(frozen=True)
class GadgetSpec:
    """One probe program: B branches, N-byte stride, base placement."""

    branch_count: int
    stride: int
    base_address: int = DEFAULT_BASE
    branch_offset: int = BRANCH_OFFSET
    alignment_exponent: int = DEFAULT_ALIGN_EXP

    def footprint(self) -> int:
        """Total bytes: B blocks plus the final return instruction."""
        return self.branch_count * self.stride + 4


def validate_spec(spec: GadgetSpec) -> list[str]:
    """Return every invariant violation; an empty list means ok."""
    problems = []
    if spec.branch_count < 1:
        problems.append("branch count must be >= 1")
    if spec.stride < MIN_STRIDE:
        problems.append(f"stride below minimum {MIN_STRIDE}")
    if spec.stride & (spec.stride - 1):
        problems.append("stride not power of two")
    if spec.base_address % (1 << spec.alignment_exponent):
        problems.append(f"base not aligned to 2^{spec.alignment_exponent}")
    if spec.branch_offset != BRANCH_OFFSET:
        problems.append("branch offset is fixed at +4 by the block layout")
    return problems


def _require_valid(spec: GadgetSpec):
    problems = validate_spec(spec)
    if problems:
        raise ValueError("invalid gadget spec: " + "; ".join(problems))


def branch_addresses(branch_count: int, stride: int, base_address: int = DEFAULT_BASE,
                     branch_offset: int = BRANCH_OFFSET) -> list[int]:
    """Branch-instruction PCs base + k*N + 4 without emission constraints.

    Strides down to 4 are accepted here: they cannot be realized by any
    8-byte gadget block, but the simulator can still replay them, which is
    the only way to probe index bits below bit 3.
    """
    if branch_count < 1:
        raise ValueError("branch count must be >= 1")
    if stride < MIN_SIM_STRIDE or stride & (stride - 1):
        raise ValueError(f"stride must be a power of two >= {MIN_SIM_STRIDE}")
    return [base_address + k * stride + branch_offset for k in range(branch_count)]


def build_trace(spec: GadgetSpec) -> list[int]:
    """Branch PCs of a valid gadget, in execution order (strictly increasing)."""
    _require_valid(spec)
    return branch_addresses(spec.branch_count, spec.stride,
                            spec.base_address, spec.branch_offset)


def emit_asm(spec: GadgetSpec) -> str:
    """GNU-assembler text for the gadget; deterministic, byte-identical per spec.

    Blocks are stride-aligned with .p2align directives; small strides also
    write the padding nops out explicitly. Strides of 2^20 bytes and up are
    beyond adr reach, so those gadgets materialize targets with adrp, which
    is exact because every block offset is then 4 KiB aligned.
    """
    _require_valid(spec)
    b, n = spec.branch_count, spec.stride
    far = n >= _ADR_REACH
    p2 = n.bit_length() - 1
    nops = n // 4 - 2
    mat = "adrp" if far else "adr"

    lines = [
        f"# btb-recon: B={b} N={n}",
        f"# {b} branch blocks at {n}-byte stride; block: {mat} x0,<next> at +0, br x0 at +4",
    ]
    if far:
        lines.append("# far stride: adrp page form (all block labels are 4 KiB aligned)")
    lines += [
        "\t.text",
        f"\t.global\t{ENTRY_SYMBOL}",
        f"\t.type\t{ENTRY_SYMBOL}, %function",
        f"\t.p2align\t{p2}",
        f"{ENTRY_SYMBOL}:",
    ]
    for k in range(b):
        if k:
            lines.append(f"next{k}:")
        lines.append(f"\t{mat}\tx0, next{k + 1}")
        lines.append("\tbr\tx0")
        if nops <= _MAX_EXPLICIT_NOPS:
            lines.extend(["\tnop"] * nops)
        lines.append(f"\t.p2align\t{p2}")
    lines.append(f"next{b}:")
    lines.append("\tret")
    lines.append(f"\t.size\t{ENTRY_SYMBOL}, . - {ENTRY_SYMBOL}")
    return "\n".join(lines) + "\n"
