import argparse
import csv
import json
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Tuple

from matplotlib import pyplot as plt  # type: ignore

root = Path(__file__).parent.absolute()

Series = Dict[int, List[Tuple[int, float]]]


class SweepPlots(object):
    """Plot the metrics tables written by `pnpde run` and `pnpde compare`"""

    def __init__(self, output_dir: str, plot_dir: str) -> None:
        self.output_dir = Path(output_dir)
        self.plot_dir = Path(plot_dir)
        self.plot_dir.mkdir(parents=True, exist_ok=True)

    def get_filepath(self, filename: str) -> Path:
        return Path.joinpath(self.plot_dir, filename)

    def read_series(self, column: str, axis: str = "n") -> Series:
        """Group a metrics.csv column by the size of the other grid axis

        :param column: The metrics.csv column to plot
        :param axis: Grid axis on the horizontal axis, "n" or "m"
        :return: Map from the fixed size to sorted (size, value) pairs
        """
        other = "m" if axis == "n" else "n"
        series: Series = defaultdict(list)
        with open(self.output_dir / "metrics.csv", mode="r") as inp:
            for row in csv.DictReader(inp):
                series[int(row[other])].append(
                    (int(row[axis]), float(row[column]))
                )
        return {k: sorted(v) for k, v in sorted(series.items())}

    def plot_metric(self, column: str, axis: str, label: str) -> None:
        other = "m" if axis == "n" else "n"
        plt.figure()
        for fixed, points in self.read_series(column, axis).items():
            plt.loglog(
                [p[0] for p in points],
                [p[1] for p in points],
                marker="o",
                label=f"{other} = {fixed}",
            )
        plt.legend(loc="best")
        plt.ylabel(label, rotation="vertical")
        plt.xlabel(axis)
        plt.title(f"{label} against {axis}")
        plt.savefig(self.get_filepath(f"{column}_{axis}.png"))
        plt.close()

    def plot_compare(self) -> None:
        """Chart the errors of both methods at equal f budgets"""
        path = self.output_dir / "compare.csv"
        if not path.exists():
            return
        with open(path, mode="r") as inp:
            rows = list(csv.DictReader(inp))
        labels = [f"{r['n']}x{r['m']}" for r in rows]
        positions = range(len(rows))
        plt.figure()
        plt.bar(
            [p - 0.2 for p in positions],
            [float(r["e_inf_pnm"]) for r in rows],
            width=0.4,
            label="PNM",
        )
        plt.bar(
            [p + 0.2 for p in positions],
            [float(r["e_inf_cn"]) for r in rows],
            width=0.4,
            label="Crank-Nicolson",
        )
        plt.xticks(list(positions), labels)
        plt.yscale("log")
        plt.legend(loc="upper right")
        plt.ylabel("E_inf", rotation="vertical")
        plt.title("Errors at equal budgets of f")
        plt.savefig(self.get_filepath("compare.png"))
        plt.close()

    def write_report(self) -> None:
        """Summarise slopes and failures in report.md

        :return: None
        """
        with open(self.output_dir / "report.json", "r") as f:
            report = json.load(f)
        with open(self.get_filepath("report.md"), "w") as f:
            f.write(f"# {report['config']['problem']}\n\n")
            f.write("Convergence slopes\n")
            f.write("---------\n")
            for axis, slopes in sorted(report["slopes"].items()):
                for fixed, slope in sorted(
                    slopes.items(), key=lambda kv: int(kv[0])
                ):
                    f.write(f"- along {axis}, fixed {fixed}: {slope:.3f}\n")
            if report["failures"]:
                f.write("\nFailed cells\n---------\n")
                for failure in report["failures"]:
                    f.write(
                        f"- {failure['i']}:{failure['j']} "
                        f"{failure['error']}: {failure['message']}\n"
                    )
            if "reference" in report:
                reference = report["reference"]
                f.write(
                    f"\nReference error estimate "
                    f"{reference['error_estimate']:.3g}, converged: "
                    f"{reference['converged']}\n"
                )


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("output_dir", help="Directory written by pnpde")
    parser.add_argument("--plots", default=str(root / "plots"))

    args = parser.parse_args()
    plots = SweepPlots(args.output_dir, args.plots)
    for column, label in (("e_inf", "E_inf"), ("z", "Z")):
        for axis in ("n", "m"):
            plots.plot_metric(column, axis, label)
    plots.plot_compare()
    plots.write_report()
