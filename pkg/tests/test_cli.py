import json

import numpy as np
import pytest

from timefreeze import io
from timefreeze.cli import main, run
from timefreeze.config import ConfigError, builtin_scenarios, load_config, scenario_path
from timefreeze.dynamics import assemble_time_frozen, bouncing_ball
from timefreeze.ocp import extract_solution, initial_guess, particle_ocp, transcribe
from timefreeze.simulate import RK4, analytic_bouncing_ball, convergence_study, integrate, recover_physical

SHIPPED = ["aux-check", "bouncing-ball-converge", "bouncing-ball-sim", "particle-3d-ocp",
           "particle-3d-sim"]


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestConfig:
    def test_builtin_list(self):
        assert builtin_scenarios() == SHIPPED

    @pytest.mark.parametrize("name", SHIPPED)
    def test_shipped_validate(self, name):
        cfg = load_config(scenario_path(name))
        assert cfg["name"] == name

    def test_particle_sim_fixed(self):
        cfg = load_config("particle-3d-sim")
        assert cfg["run"]["y0"] == [4.0, 4.0, 1.0, -3.0, -3.5, 0.0, 0.0]
        assert cfg["run"]["u"] == [0.0, 0.0, 0.0]

    def test_ball_sim_fixed(self):
        cfg = load_config("bouncing-ball-sim")
        assert (cfg["system"]["gamma"], cfg["system"]["k"]) == (0.9, 5.0)

    def test_gamma_zero(self, tmp_path):
        p = write(tmp_path, 'kind = "simulate"\n[system]\nbuiltin = "bouncing-ball"\ngamma = 0\n'
                            '[run]\ny0 = [1, 0]\ntau_f = 1\n')
        with pytest.raises(ConfigError, match=r"system\.gamma.*\(0, 1\]"):
            load_config(p)

    def test_builtin_override(self, tmp_path):
        p = write(tmp_path, 'kind = "simulate"\n[system]\nbuiltin = "bouncing-ball"\ndrift = [1]\n'
                            '[run]\ny0 = [1, 0]\ntau_f = 1\n')
        with pytest.raises(ConfigError, match="system.drift"):
            load_config(p)

    def test_unknown_key(self, tmp_path):
        p = write(tmp_path, 'kind = "simulate"\ncolour = 1\n[system]\nbuiltin = "bouncing-ball"\n')
        with pytest.raises(ConfigError, match="colour"):
            load_config(p)

    def test_json_accepted(self, tmp_path):
        p = write(tmp_path, json.dumps({"kind": "aux-check", "system": {"builtin": "bouncing-ball"}}),
                  "c.json")
        assert load_config(p)["kind"] == "aux-check"

    def test_missing(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.toml")


class TestRun:
    def test_simulate_ball(self, tmp_path, capsys):
        assert main(["simulate", "bouncing-ball-sim", "--out", str(tmp_path)]) == 0
        assert "2 jumps" in capsys.readouterr().out
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["n_jumps"] == 2
        assert (tmp_path / "trajectory.csv").exists() and (tmp_path / "physical.csv").exists()

    def test_aux_check(self, tmp_path):
        status, summary, _ = run("aux-check", "aux-check", str(tmp_path))
        assert status == 0
        assert summary["checks"][0]["tau_return"] == pytest.approx(1.4058, abs=1e-3)

    def test_converge_custom(self, tmp_path):
        p = write(tmp_path, 'kind = "converge"\n[system]\nbuiltin = "bouncing-ball"\nk = 5.0\n'
                            '[run]\ny0 = [0.5, 0]\nt_f = 1\nn_jumps = 2\n'
                            '[converge]\nschemes = ["explicit-euler"]\nM = [4000, 8000]\n')
        status, summary, line = run("converge", p, str(tmp_path / "out"))
        assert status == 0, line
        table = io.read_convergence_csv(tmp_path / "out" / "convergence.csv")
        assert [r[1] for r in table.rows] == [4000, 8000]

    def test_ocp_small(self, tmp_path):
        p = write(tmp_path, 'kind = "ocp"\n[system]\nbuiltin = "particle-3d"\nk = 100.0\n'
                            '[run]\ny0 = [4, 4, 1, -3, -3.5, 0]\n'
                            '[ocp]\ntarget = [5, 5, 1]\nN = 8\n[ocp.homotopy]\ncount = 2\n')
        status, summary, line = run("ocp", p, str(tmp_path / "out"))
        assert status == 0, line
        assert summary["n_stages"] == 2
        header = (tmp_path / "out" / "ocp_solution.csv").read_text().splitlines()[3]
        assert header.startswith("s,tau,t,x0")

    def test_gamma_zero_exit_2(self, tmp_path, capsys):
        p = write(tmp_path, 'kind = "simulate"\n[system]\nbuiltin = "bouncing-ball"\ngamma = 0\n'
                            '[run]\ny0 = [1, 0]\ntau_f = 1\n')
        assert main(["simulate", str(p), "--out", str(tmp_path)]) == 2
        assert "gamma" in capsys.readouterr().err

    def test_kind_mismatch_exit_2(self, tmp_path):
        assert main(["ocp", "bouncing-ball-sim", "--out", str(tmp_path)]) == 2

    def test_numerical_failure_exit_3(self, tmp_path):
        # one interior-point iteration cannot solve the first homotopy stage
        p = write(tmp_path, 'kind = "ocp"\n[system]\nbuiltin = "particle-3d"\n'
                            '[run]\ny0 = [4, 4, 1, -3, -3.5, 0]\n'
                            '[ocp]\ntarget = [5, 5, 1]\nN = 6\nmax_iter = 1\n', "bad.toml")
        status, _, msg = run("ocp", p, str(tmp_path))
        assert status == 3
        assert "numerical failure" in msg

    def test_list(self, capsys):
        assert main(["list"]) == 0
        assert capsys.readouterr().out.split() == SHIPPED


class TestRoundTrip:
    def test_trajectory(self, tmp_path):
        sys_ = assemble_time_frozen(bouncing_ball(0.9), 5)
        traj = integrate(sys_, [0.5, 0.0, 0.0], None, 2.0, 1e-3, RK4)
        back = io.read_trajectory_csv(io.write_trajectory_csv(tmp_path / "t.csv", traj))
        assert np.array_equal(back.states, traj.states)
        assert np.array_equal(back.tau_grid, traj.tau_grid)
        assert back.h == traj.h and back.scheme == traj.scheme

    def test_trajectory_with_controls(self, tmp_path):
        nlp = transcribe(particle_ocp(N=5))
        sol = extract_solution(nlp, initial_guess(nlp))
        back = io.read_trajectory_csv(io.write_trajectory_csv(tmp_path / "t.csv", sol.trajectory))
        assert np.array_equal(back.controls, sol.trajectory.controls)

    def test_physical(self, tmp_path):
        sys_ = assemble_time_frozen(bouncing_ball(0.9), 5)
        phys = recover_physical(integrate(sys_, [0.5, 0.0, 0.0], None, 3.8, 1e-3, RK4))
        back = io.read_physical_csv(io.write_physical_csv(tmp_path / "p.csv", phys))
        assert np.array_equal(back.states, phys.states)
        assert np.array_equal(back.t_grid, phys.t_grid)
        assert np.array_equal(back.frozen_mask, phys.frozen_mask)

    def test_convergence(self, tmp_path):
        sys_ = assemble_time_frozen(bouncing_ball(0.9), 5)
        oracle = lambda t: np.array(analytic_bouncing_ball(0.5, 0.0, 0.9, 9.81, t))
        table = convergence_study(sys_, [0.5, 0.0, 0.0], oracle, 3.8116, 1.0, ["rk4"], [400, 800])
        back = io.read_convergence_csv(io.write_convergence_csv(tmp_path / "c.csv", table))
        assert back.rows == table.rows
        assert back.orders == table.orders

    def test_json(self, tmp_path):
        data = {"a": np.arange(3), "b": np.float64(np.nan), "c": (np.int64(2), np.bool_(True))}
        p = io.write_json(tmp_path / "s.json", data)
        assert json.loads(p.read_text()) == {"a": [0, 1, 2], "b": None, "c": [2, True]}


@pytest.mark.parametrize("name", [s for s in SHIPPED if s != "particle-3d-ocp"])
def test_shipped_runs(tmp_path, name):
    kind = load_config(name)["kind"]
    status, _, line = run(kind, name, str(tmp_path))
    assert status == 0, line
