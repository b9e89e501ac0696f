import textwrap

import pytest


def write(path, text):
    path.write_text(textwrap.dedent(text).lstrip())
    return str(path)


@pytest.fixture
def profile_csv(tmp_path):
    return write(tmp_path / "free_energy.csv", """
        # dimermc=0.1.0 config=abc seed=0
        bin_index,z_center,value,count
        0,-0.19,0.86,120
        1,-0.16,0.62,140
        2,-0.13,0.41,200
        3,-0.10,0.22,260
        4,-0.07,0.08,300
        5,-0.04,0.0,310
        6,-0.01,0.05,280
        7,0.02,0.21,220
    """)


@pytest.fixture
def sweep_csv(tmp_path):
    return write(tmp_path / "sweep.csv", """
        # dimermc=0.1.0 config=abc seed=1
        scheme,alpha,dt,tau_hat,ci_low,ci_high,n_transitions,accept_rate,failed
        mala,0,0.001,21000,20000,22000,2000,0.9,0
        mala,0,0.002,11000,10500,11500,2000,0.8,0
        mala,0,0.004,6400,6100,6700,2000,0.62,0
        mala,0.8,0.001,14000,13300,14700,2000,0.9,0
        mala,0.8,0.002,7300,7000,7600,2000,0.81,0
        mala,0.8,0.004,4600,4400,4800,2000,0.6,0
        mala,1.2,0.002,8100,7700,8500,2000,0.8,1
    """)


@pytest.fixture
def trace_csv(tmp_path):
    lines = ["# dimermc=0.1.0 config=abc seed=2",
             "iteration,xi,V,accepted,bin"]
    lines += [f"{10*i},{0.5 + 0.45*(-1)**(i//40)},{-1.0},{1},{42}"
              for i in range(200)]
    path = tmp_path / "trajectory.csv"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture
def snapshots_csv(tmp_path):
    lines = ["# dimermc=0.1.0 config=abc seed=3",
             "iteration,bin_index,z_center,value"]
    for it in (3600, 24000, 36000):
        for b in range(6):
            z = -0.2 + 0.1 * b
            v = 0.2 * b * (it / 36000)
            lines.append(f"{it},{b},{z},{v}")
    path = tmp_path / "snapshots.csv"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture
def rejection_csv(tmp_path):
    lines = ["# dimermc=0.1.0 config=abc seed=4",
             "scheme,alpha,dt,category,count,percent"]
    for dt, parts in (
        (0.05, (0.0, 0.0066, 0.0, 0.0, 0.0, 0.16)),
        (0.083, (0.0, 1.6, 0.015, 0.0039, 2.2, 0.2)),
        (0.1, (0.0, 0.19, 0.0, 0.13, 0.027, 0.56)),
    ):
        cats = ("fwd_momenta", "fwd_position", "bwd_momenta",
                "bwd_position", "reversibility", "metropolis")
        for cat, pct in zip(cats, parts):
            lines.append(f"rmhmc,1.0,{dt},{cat},{int(pct*1e4)},{pct}")
        lines.append(f"rmhmc,1.0,{dt},global,{int(sum(parts)*1e4)},"
                     f"{sum(parts)}")
    path = tmp_path / "rejections.csv"
    path.write_text("\n".join(lines) + "\n")
    return str(path)
