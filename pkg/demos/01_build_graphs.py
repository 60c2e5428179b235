"""Build the hierarchy decomposition for the 25-joint skeleton and export
the graphs in every supported form.

Run:  python3 demos/01_build_graphs.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from hdgcn.hdgraph import (S_CP, build_conventional, build_hd, decompose,
                           hd_edge_union, normalize, to_dot)
from hdgcn.topology import builtin

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/graphs")
out.mkdir(parents=True, exist_ok=True)

topo = builtin("ntu25")
print(f"topology {topo.name}: {topo.num_joints} joints, "
      f"{len(topo.pc_edges)} inward edges, CoM candidates {topo.com_candidates}")

for com in ("belly", "chest", "hip"):
    decomp = decompose(topo, com)
    print(f"\nCoM = {com} (joint {decomp.com}) -> {decomp.n_h} hierarchy sets:")
    for k, members in enumerate(decomp.sets, start=1):
        names = ", ".join(topo.joint_names[j - 1] for j in members)
        print(f"  H_{k}: {list(members)}  [{names}]")

decomp = decompose(topo, "belly")
for variant in ("fc", "pc"):
    adj = build_hd(decomp, variant, topology=topo)
    normed = normalize(adj)
    union = hd_edge_union(adj, S_CP)
    print(f"\nvariant {variant}: tensor {adj.tensor.shape}, "
          f"{int(adj.tensor[:, S_CP].sum())} centripetal entries, "
          f"union of {len(union)} distinct edges")
    (out / f"hd_{variant}.dot").write_text(to_dot(decomp, adj, topo.joint_names))
    np.save(out / f"hd_{variant}.npy", normed.tensor)

conv = build_conventional(topo)
print(f"\nconventional: tensor {conv.tensor.shape}, "
      f"{int(conv.tensor[S_CP].sum())} centripetal entries")
print(f"\nwrote DOT/npy exports to {out}/")
