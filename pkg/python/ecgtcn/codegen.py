"""
C99 source emission.

`emit_source` turns a `QNetwork` into three self-contained files:

``net.h``
    The inference API: ``net_infer_arena`` works in a caller-provided arena,
    ``net_infer`` (static buffers only) in a file-scope one.
``net.c``
    Kernels and flat constant tables (``NET_WEIGHTS``, ``NET_BIASES``,
    ``NET_REQUANT``) indexed through generated ``#define`` offsets.
``main.c``
    A harness reading golden-vector lines on stdin and printing
    ``logit0 .. logit4 class`` per line.

The emitted arithmetic mirrors `ecgtcn.engine` step by step, so compiled logits
are bit-identical to the engine's. No heap, no floating point, and no I/O
outside the harness.
"""

from __future__ import annotations

import logging
import shlex
import shutil
import subprocess
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Final

import numpy as np
from numpy.typing import NDArray

from .cost import allocate_arena, buffer_lifetimes
from .data import Dataset
from .engine import execution_schedule, qforward, quantize_input, zero_stuff
from .errors import DomainError, EmissionError, ParseError, UsageError
from .quantize import QConv, QDense, QNetwork, QResidualBlock

__all__ = [
    "DEFAULT_COMPILE_COMMAND",
    "GoldenVectors",
    "SourceBundle",
    "build_harness",
    "emit_golden_vectors",
    "emit_source",
    "find_compiler",
    "read_golden_vectors",
    "run_harness",
    "write_bundle",
]

logger = logging.getLogger(__name__)

DEFAULT_COMPILE_COMMAND: Final = (
    "{cc} -std=c99 -O2 -Wall -Wextra -Werror -pedantic -o {exe} {sources}"
)
_VALUES_PER_LINE: Final = 16


@dataclass(frozen=True)
class SourceBundle:
    """
    Emitted sources plus the sizes they commit to.

    Attributes
    ----------
    header, implementation, harness : str
        Contents of ``net.h``, ``net.c`` and ``main.c``.
    constant_bytes : int
        Bytes of all constant tables.
    arena_bytes : int
        Size of the activation arena.
    """

    header: str
    implementation: str
    harness: str
    constant_bytes: int
    arena_bytes: int

    def files(self) -> dict[str, str]:
        return {"net.h": self.header, "net.c": self.implementation, "main.c": self.harness}


def _ident(name: str) -> str:
    return name.replace(".", "_").upper()


def _c_array(ctype: str, name: str, values: Sequence[int]) -> str:
    rows = [
        "    " + ", ".join(str(int(v)) for v in values[i : i + _VALUES_PER_LINE])
        for i in range(0, len(values), _VALUES_PER_LINE)
    ]
    return f"static const {ctype} {name}[{len(values)}] = {{\n" + ",\n".join(rows) + "\n};\n"


_PRELUDE: Final = """\
static int64_t net_shift(int64_t v, int32_t s)
{
    /* floor(v / 2^s) without relying on signed right shift */
    return v >= 0 ? v >> s : -((-v - 1) >> s) - 1;
}

static int64_t net_scale(int64_t acc, int32_t mult, int32_t shift)
{
    return net_shift(acc * mult + ((int64_t)1 << (shift - 1)), shift);
}

static int8_t net_clamp(int64_t v)
{
    return (int8_t)(v < -128 ? -128 : (v > 127 ? 127 : v));
}

static void net_conv(const int8_t *x, int8_t *y, const int8_t *w, const int32_t *b,
                     const int32_t *rq, int cin, int cout, int k, int d,
                     int32_t zp_in, int32_t zp_out, int relu)
{
    int o, i, j, n;
    for (o = 0; o < cout; ++o) {
        for (n = 0; n < NET_INPUT_LEN; ++n) {
            int64_t acc = b[o];
            int8_t v;
            for (j = 0; j < k; ++j) {
                int src = n - (k - 1 - j) * d;
                if (src < 0) {
                    continue; /* causal padding holds zp_in */
                }
                for (i = 0; i < cin; ++i) {
                    acc += (int64_t)w[(o * cin + i) * k + j]
                           * (x[i * NET_INPUT_LEN + src] - zp_in);
                }
            }
            v = net_clamp(net_scale(acc, rq[0], rq[1]) + zp_out);
            if (relu && v < zp_out) {
                v = (int8_t)zp_out;
            }
            y[o * NET_INPUT_LEN + n] = v;
        }
    }
}
"""

_ADD: Final = """
static void net_add(int8_t *a, const int8_t *b, int len, int32_t zp_a, int32_t zp_b,
                    const int32_t *rq, int32_t zp_out)
{
    int n;
    for (n = 0; n < len; ++n) {
        int64_t sa = net_scale((int64_t)(a[n] - zp_a), rq[0], rq[1]);
        int64_t sb = net_scale((int64_t)(b[n] - zp_b), rq[2], rq[3]);
        int8_t v = net_clamp(sa + sb + zp_out);
        a[n] = v < zp_out ? (int8_t)zp_out : v;
    }
}
"""

_DENSE: Final = """
static int net_dense(const int8_t *x, int32_t zp, const int8_t *w, const int32_t *b,
                     int in, int32_t *logits)
{
    int o, f, best = 0;
    for (o = 0; o < NET_N_CLASSES; ++o) {
        int64_t acc = b[o];
        for (f = 0; f < in; ++f) {
            acc += (int64_t)w[o * in + f] * (x[f] - zp);
        }
        logits[o] = (int32_t)acc;
        if (logits[o] > logits[best]) {
            best = o;
        }
    }
    return best + 1;
}
"""


def _header(qnet: QNetwork, arena_bytes: int, static_buffers: bool) -> str:
    lines = [
        "#ifndef NET_H",
        "#define NET_H",
        "",
        "#include <stdint.h>",
        "",
        f"#define NET_INPUT_LEN {qnet.cfg.input_len}",
        f"#define NET_N_CLASSES {qnet.cfg.n_classes}",
        f"#define NET_ARENA_BYTES {arena_bytes}",
        "",
        "/* Classify one pre-quantized beat; returns the 1-based class. */",
        "int net_infer_arena(int8_t *arena, const int8_t *input, int32_t *logits);",
    ]
    if static_buffers:
        lines.append("int net_infer(const int8_t *input, int32_t *logits);")
    lines += ["", "#endif", ""]
    return "\n".join(lines)


def _harness(static_buffers: bool) -> str:
    if static_buffers:
        call = "net_infer(input, logits)"
        arena = ""
    else:
        call = "net_infer_arena(arena, input, logits)"
        arena = "    static int8_t arena[NET_ARENA_BYTES];\n"
    return f"""\
#include <stdio.h>

#include "net.h"

int main(void)
{{
    int8_t input[NET_INPUT_LEN];
    int32_t logits[NET_N_CLASSES];
{arena}    long v;
    for (;;) {{
        int n, cls;
        for (n = 0; n < NET_INPUT_LEN + NET_N_CLASSES; ++n) {{
            if (scanf("%ld", &v) != 1) {{
                return n == 0 ? 0 : 1;
            }}
            if (n < NET_INPUT_LEN) {{
                input[n] = (int8_t)v;
            }}
        }}
        cls = {call};
        for (n = 0; n < NET_N_CLASSES; ++n) {{
            printf("%ld ", (long)logits[n]);
        }}
        printf("%d\\n", cls);
    }}
}}
"""


def emit_source(
    qnet: QNetwork, native_dilation: bool = True, static_buffers: bool = True
) -> SourceBundle:
    """
    Emit a C99 implementation of `qnet`.

    Parameters
    ----------
    qnet : QNetwork
        Network to emit; its accumulator bounds are checked first.
    native_dilation : bool
        If False, dilated kernels are zero-stuffed before emission.
    static_buffers : bool
        Also emit ``net_infer`` with a file-scope arena.

    Returns
    -------
    SourceBundle
        Header, implementation and harness texts.

    Raises
    ------
    CapacityError
        If an accumulator could overflow int32.
    EmissionError
        If a schedule step has no emitter.
    """
    qnet.validate()
    schedule = execution_schedule(qnet)
    arena = allocate_arena(buffer_lifetimes(qnet))
    weights: list[int] = []
    biases: list[int] = []
    requant: list[int] = []
    defines: list[str] = []
    calls: list[str] = []
    zps = {"input": qnet.input_qp.zero_point}

    def offsets(name: str, w: NDArray | None, b: NDArray | None, rq: list[int]) -> str:
        ident = _ident(name)
        if w is not None:
            defines.append(f"#define NET_W_{ident} {len(weights)}")
            weights.extend(w.reshape(-1).tolist())
        if b is not None:
            defines.append(f"#define NET_B_{ident} {len(biases)}")
            biases.extend(b.reshape(-1).tolist())
        if rq:
            defines.append(f"#define NET_R_{ident} {len(requant)}")
            requant.extend(rq)
        return ident

    def buf(name: str) -> str:
        return f"arena + {arena.offsets[name]}"

    for step in schedule:
        layer = step.layer
        if isinstance(layer, QConv):
            conv = layer if native_dilation else zero_stuff(layer)
            ident = offsets(
                conv.name, conv.weight, conv.bias, [conv.requant.mult, conv.requant.shift]
            )
            src = step.inputs[0]
            calls.append(
                f"    net_conv({buf(src)}, {buf(step.output)}, NET_WEIGHTS + NET_W_{ident}, "
                f"NET_BIASES + NET_B_{ident}, NET_REQUANT + NET_R_{ident}, {conv.in_ch}, "
                f"{conv.out_ch}, {conv.kernel_len}, {conv.dilation}, {zps[src]}, "
                f"{conv.out_qp.zero_point}, {int(conv.relu)});"
            )
            zps[step.output] = conv.out_qp.zero_point
        elif isinstance(layer, QResidualBlock):
            main, skip = step.inputs
            ident = offsets(
                step.name,
                None,
                None,
                [layer.add_main.mult, layer.add_main.shift, layer.add_skip.mult,
                 layer.add_skip.shift],
            )
            length = layer.conv2.out_ch * qnet.cfg.input_len
            calls.append(
                f"    net_add({buf(main)}, {buf(skip)}, {length}, {zps[main]}, {zps[skip]}, "
                f"NET_REQUANT + NET_R_{ident}, {layer.out_qp.zero_point});"
            )
            zps[main] = layer.out_qp.zero_point
        elif isinstance(layer, QDense):
            ident = offsets(layer.name, layer.weight, layer.bias, [])
            src = step.inputs[0]
            calls.append(
                f"    return net_dense({buf(src)}, {zps[src]}, NET_WEIGHTS + NET_W_{ident}, "
                f"NET_BIASES + NET_B_{ident}, {layer.in_features}, logits);"
            )
        else:
            raise EmissionError(f"no emitter for step {step.name}")

    parts = [
        "/* Generated by ecgtcn. */",
        "",
        '#include "net.h"',
        "",
        *defines,
        "",
        _c_array("int8_t", "NET_WEIGHTS", weights),
        _c_array("int32_t", "NET_BIASES", biases),
        _c_array("int32_t", "NET_REQUANT", requant),
        _PRELUDE,
    ]
    if qnet.blocks:
        parts.append(_ADD)
    parts += [
        _DENSE,
        "int net_infer_arena(int8_t *arena, const int8_t *input, int32_t *logits)",
        "{",
        "    int n;",
        "    for (n = 0; n < NET_INPUT_LEN; ++n) {",
        f"        arena[{arena.offsets['input']} + n] = input[n];",
        "    }",
        *calls,
        "}",
    ]
    if static_buffers:
        parts += [
            "",
            "static int8_t net_arena[NET_ARENA_BYTES];",
            "",
            "int net_infer(const int8_t *input, int32_t *logits)",
            "{",
            "    return net_infer_arena(net_arena, input, logits);",
            "}",
        ]
    implementation = "\n".join(parts) + "\n"
    constant_bytes = len(weights) + 4 * len(biases) + 4 * len(requant)
    logger.debug(
        "emitted %d steps, %d constant bytes, arena %d bytes",
        len(schedule), constant_bytes, arena.size,
    )
    return SourceBundle(
        header=_header(qnet, arena.size, static_buffers),
        implementation=implementation,
        harness=_harness(static_buffers),
        constant_bytes=constant_bytes,
        arena_bytes=arena.size,
    )


def write_bundle(bundle: SourceBundle, out_dir: Path | str) -> list[Path]:
    """Write ``net.h``, ``net.c`` and ``main.c`` into `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in bundle.files().items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        paths.append(path)
        logger.info("wrote %s", path)
    return paths


@dataclass(frozen=True, eq=False)
class GoldenVectors:
    """Pre-quantized inputs ``(N, T)`` and their expected logits ``(N, n_classes)``."""

    inputs: NDArray[np.int8]
    logits: NDArray[np.int32]

    def __len__(self) -> int:
        return len(self.inputs)

    def to_text(self) -> str:
        return "".join(
            " ".join(str(int(v)) for v in (*x, *y)) + "\n"
            for x, y in zip(self.inputs, self.logits)
        )


def emit_golden_vectors(
    qnet: QNetwork, ds: Dataset, n: int, seed: int = 0
) -> GoldenVectors:
    """
    Sample `n` beats and record their quantized inputs and engine logits.

    Raises
    ------
    DomainError
        If the dataset is empty.
    UsageError
        If `n` exceeds the dataset size or is not positive.
    """
    if len(ds) == 0:
        raise DomainError("cannot draw golden vectors from an empty dataset")
    if not 1 <= n <= len(ds):
        raise UsageError(f"need 1 <= n <= {len(ds)}, got {n}")
    picks = np.sort(np.random.default_rng(seed).choice(len(ds), size=n, replace=False))
    inputs = quantize_input(qnet, ds.x[picks])
    logits = qforward(qnet, inputs)
    return GoldenVectors(inputs[:, 0, :], logits)


def read_golden_vectors(
    path: Path | str, input_len: int = 140, n_classes: int = 5
) -> GoldenVectors:
    """Parse a golden-vector file, one ``input_len + n_classes`` integer line per beat."""
    path = Path(path)
    rows: list[list[int]] = []
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != input_len + n_classes:
                raise ParseError(
                    str(path), line_no, f"expected {input_len + n_classes} integers"
                )
            try:
                rows.append([int(v) for v in fields])
            except ValueError as exc:
                raise ParseError(str(path), line_no, f"non-integer field ({exc})") from None
    data = np.asarray(rows, dtype=np.int64).reshape(-1, input_len + n_classes)
    return GoldenVectors(
        data[:, :input_len].astype(np.int8), data[:, input_len:].astype(np.int32)
    )


def find_compiler() -> str | None:
    """First C compiler found on ``PATH`` among ``cc``, ``gcc`` and ``clang``."""
    for name in ("cc", "gcc", "clang"):
        found = shutil.which(name)
        if found:
            return found
    return None


def build_harness(
    src_dir: Path | str,
    exe: Path | str | None = None,
    command: str = DEFAULT_COMPILE_COMMAND,
    cc: str | None = None,
) -> Path:
    """
    Compile an emitted bundle into the golden-vector harness.

    Parameters
    ----------
    src_dir : Path or str
        Directory holding ``net.c`` and ``main.c``.
    exe : Path or str, optional
        Output executable; defaults to ``src_dir/net_harness``.
    command : str
        Command template with ``{cc}``, ``{exe}`` and ``{sources}`` fields.
    cc : str, optional
        Compiler; defaults to `find_compiler`.

    Raises
    ------
    EmissionError
        If no compiler is available or compilation fails.
    """
    src = Path(src_dir)
    exe = Path(exe) if exe is not None else src / "net_harness"
    cc = cc or find_compiler()
    if cc is None:
        raise EmissionError("no C compiler found on PATH")
    argv: list[str] = []
    for token in shlex.split(command):
        if token == "{sources}":
            argv += [str(src / "net.c"), str(src / "main.c")]
        else:
            argv.append(token.format(cc=cc, exe=str(exe)))
    logger.debug("compiling: %s", shlex.join(argv))
    try:
        subprocess.run(argv, capture_output=True, text=True, check=True)
    except subprocess.CalledProcessError as exc:
        raise EmissionError(f"compilation failed:\n{exc.stderr}") from None
    except OSError as exc:
        raise EmissionError(f"cannot run compiler: {exc}") from None
    return exe


def run_harness(
    exe: Path | str, vectors: GoldenVectors
) -> tuple[NDArray[np.int32], NDArray[np.int64]]:
    """
    Feed golden vectors through a compiled harness.

    Returns
    -------
    tuple
        Logits ``(N, n_classes)`` and 1-based classes ``(N,)`` printed by the binary.
    """
    try:
        proc = subprocess.run(
            [str(exe)], input=vectors.to_text(), capture_output=True, text=True, check=True
        )
    except subprocess.CalledProcessError as exc:
        raise EmissionError(f"harness exited with {exc.returncode}:\n{exc.stderr}") from None
    rows = [[int(v) for v in line.split()] for line in proc.stdout.splitlines() if line.strip()]
    if len(rows) != len(vectors):
        raise EmissionError(f"harness printed {len(rows)} lines for {len(vectors)} vectors")
    out = np.asarray(rows, dtype=np.int64).reshape(len(rows), -1)
    return out[:, :-1].astype(np.int32), out[:, -1]
