"""The learned radiance transfer field.

Maps (surface point, normal, incoming light direction, outgoing direction)
to non-negative transferred RGB. Position goes through the multiresolution
grid encoding, both directions through the 16-component spherical-harmonics
feature, the normal is fed raw; an 8-layer MLP with a skip connection maps
the 291-dim feature to three softplus-activated outputs.

Checkpoints are a small versioned binary: a JSON header (grid config,
domain, layer shapes) followed by little-endian tensors in declared order,
plus a JSON sidecar for training metadata.
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hashgrid import HashGridConfig, HashGridEncoder
from .mlp import MlpParams, init_mlp, mlp_backward, mlp_forward
from .sh import SH_DIM, sh_basis

MAGIC = b"RTFCKPT1"


@dataclass
class TransferField:
    encoder: HashGridEncoder
    mlp: MlpParams

    @property
    def in_dim(self) -> int:
        return self.encoder.config.out_dim + 3 + 2 * SH_DIM

    @classmethod
    def create(cls, mesh, grid_config: HashGridConfig | None = None,
               seed: int = 0, dtype=np.float32) -> "TransferField":
        encoder = HashGridEncoder.build(mesh, grid_config, dtype=dtype, seed=seed)
        in_dim = encoder.config.out_dim + 3 + 2 * SH_DIM
        return cls(encoder=encoder, mlp=init_mlp(in_dim, seed=seed, dtype=dtype))

    # --- evaluation ---------------------------------------------------------

    def assemble_input(self, x, n, wi, wo, enc_cache: bool = False):
        enc, cache = self.encoder.encode(x, want_cache=enc_cache)
        dtype = self.mlp.dtype
        parts = [
            enc.astype(dtype, copy=False),
            np.atleast_2d(np.asarray(n, dtype=dtype)),
            sh_basis(wi).astype(dtype),
            sh_basis(wo).astype(dtype),
        ]
        return np.concatenate(parts, axis=1), cache

    def eval(self, x, n, wi, wo) -> np.ndarray:
        """Transferred RGB (B, 3) for per-sample direction rows."""
        inp, _ = self.assemble_input(x, n, wi, wo)
        out, _ = mlp_forward(self.mlp, inp)
        return out

    def eval_with_cache(self, x, n, wi, wo):
        inp, enc_cache = self.assemble_input(x, n, wi, wo, enc_cache=True)
        out, mlp_cache = mlp_forward(self.mlp, inp, want_cache=True)
        return out, (enc_cache, mlp_cache)

    def backward(self, cache, d_out):
        """Gradients of a scalar loss through one cached forward pass.

        Returns (mlp grads dict, (table rows, table row grads)).
        """
        enc_cache, mlp_cache = cache
        grads, d_x = mlp_backward(self.mlp, mlp_cache, d_out)
        hash_dim = self.encoder.config.out_dim
        rows, grad_rows = self.encoder.backward(enc_cache, d_x[:, :hash_dim])
        return grads, (rows, grad_rows)

    def eval_texel_matrix(
        self,
        x,
        n,
        wo,
        texel_dirs,
        block_px: int = 64,
        n_workers: int | None = None,
    ) -> np.ndarray:
        """Evaluate all (pixel, texel) pairs: returns (P, N_e, 3).

        Hot path of relighting: per pixel only the incoming-direction SH
        block changes across texels, so the first layer and the skip
        projection split into a per-pixel part and a per-texel part that are
        each computed once and broadcast. Pixel blocks are fixed, so results
        do not depend on the worker count.
        """
        x = np.atleast_2d(x)
        p = x.shape[0]
        texel_dirs = np.atleast_2d(texel_dirs)
        t = texel_dirs.shape[0]
        dtype = self.mlp.dtype
        mlp = self.mlp
        enc, _ = self.encoder.encode(x)
        fixed = np.concatenate(
            [
                enc.astype(dtype, copy=False),
                np.atleast_2d(np.asarray(n, dtype=dtype)),
                np.zeros((p, SH_DIM), dtype=dtype),
                sh_basis(wo).astype(dtype),
            ],
            axis=1,
        )
        sh_i = sh_basis(texel_dirs).astype(dtype)
        hash_dim = self.encoder.config.out_dim
        sh_lo = hash_dim + 3
        sh_hi = sh_lo + SH_DIM

        w0, b0 = mlp.weights[0], mlp.biases[0]
        # layer-1 split: rows of W0 belonging to the incoming-SH slice vs rest
        z1_fixed = fixed @ w0 + b0  # the zeroed SH slice contributes nothing
        z1_sh = sh_i @ w0[sh_lo:sh_hi]
        # skip projection split the same way (W_skip rows follow h3 rows)
        from .mlp import HIDDEN, SKIP_LAYER

        w_skip = mlp.weights[SKIP_LAYER]
        w4_h = np.ascontiguousarray(w_skip[:HIDDEN])
        w4_x = w_skip[HIDDEN:]
        skip_fixed = fixed @ w4_x
        skip_sh = sh_i @ w4_x[sh_lo:sh_hi]

        out = np.empty((p, t, 3), dtype=dtype)
        n_layers = len(mlp.weights)
        hidden = w4_h.shape[1]
        max_rows = block_px * t

        def run_blocks(blocks) -> None:
            buf_a = np.empty((max_rows, hidden), dtype=dtype)
            buf_b = np.empty((max_rows, hidden), dtype=dtype)
            for start, stop in blocks:
                bp = stop - start
                rows = bp * t
                h = buf_a[:rows]
                np.add(
                    z1_fixed[start:stop, None, :],
                    z1_sh[None, :, :],
                    out=h.reshape(bp, t, hidden),
                )
                np.maximum(h, 0, out=h)
                nxt = buf_b[:rows]
                for i in range(1, n_layers - 1):
                    np.matmul(h, w4_h if i == SKIP_LAYER else mlp.weights[i], out=nxt)
                    if i == SKIP_LAYER:
                        np.add(
                            nxt.reshape(bp, t, hidden),
                            skip_fixed[start:stop, None, :] + skip_sh[None, :, :],
                            out=nxt.reshape(bp, t, hidden),
                        )
                    nxt += mlp.biases[i]
                    np.maximum(nxt, 0, out=nxt)
                    h, nxt = nxt, h
                z = h @ mlp.weights[-1]
                z += mlp.biases[-1]
                out[start:stop] = np.logaddexp(0, z).reshape(bp, t, 3)

        blocks = [(s, min(s + block_px, p)) for s in range(0, p, block_px)]
        if n_workers is None:
            n_workers = min(4, os.cpu_count() or 1)
        n_workers = max(1, min(n_workers, len(blocks)))
        if n_workers > 1:
            shards = [blocks[k::n_workers] for k in range(n_workers)]
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                list(pool.map(run_blocks, shards))
        else:
            run_blocks(blocks)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite transfer values")
        return out

    # --- checkpoint IO --------------------------------------------------------

    def save(self, path, metadata: dict | None = None) -> None:
        path = Path(path)
        enc = self.encoder
        header = {
            "grid": enc.state_payload(),
            "n_corner_ids": int(enc.corner_ids.size),
            "n_levels": int(enc.level_offsets.size - 1),
            "table_shape": list(enc.table.shape),
            "layer_shapes": [list(s) for s in self.mlp.layer_shapes()],
            "in_dim": self.mlp.in_dim,
        }
        hdr = json.dumps(header).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(hdr)))
            f.write(hdr)
            f.write(enc.corner_ids.astype("<i8").tobytes())
            f.write(enc.level_offsets.astype("<i8").tobytes())
            f.write(enc.table.astype("<f4").tobytes())
            for w, b in zip(self.mlp.weights, self.mlp.biases):
                f.write(w.astype("<f4").tobytes())
                f.write(b.astype("<f4").tobytes())
        side = {"format": MAGIC.decode("ascii")}
        if metadata:
            side.update(metadata)
        with open(str(path) + ".json", "w", encoding="utf-8") as f:
            json.dump(side, f, indent=1)

    @classmethod
    def load(cls, path) -> "TransferField":
        path = Path(path)
        with open(path, "rb") as f:
            magic = f.read(8)
            if magic != MAGIC:
                raise ValueError(f"{path}: not a transfer-field checkpoint")
            (hdr_len,) = struct.unpack("<I", f.read(4))
            header = json.loads(f.read(hdr_len).decode("utf-8"))
            n_ids = header["n_corner_ids"]
            n_lv = header["n_levels"]
            corner_ids = np.frombuffer(f.read(n_ids * 8), dtype="<i8").copy()
            level_off = np.frombuffer(f.read((n_lv + 1) * 8), dtype="<i8").copy()
            ts = header["table_shape"]
            table = (
                np.frombuffer(f.read(ts[0] * ts[1] * 4), dtype="<f4")
                .reshape(ts)
                .copy()
            )
            weights = []
            biases = []
            for shape in header["layer_shapes"]:
                di, do = shape
                weights.append(
                    np.frombuffer(f.read(di * do * 4), dtype="<f4").reshape(di, do).copy()
                )
                biases.append(np.frombuffer(f.read(do * 4), dtype="<f4").copy())
        encoder = HashGridEncoder.from_payload(
            header["grid"], corner_ids, level_off, table
        )
        mlp = MlpParams(weights=weights, biases=biases, in_dim=header["in_dim"])
        return cls(encoder=encoder, mlp=mlp)
