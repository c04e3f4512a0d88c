"""
Run reports: metrics tables, Vega-Lite chart specs with inlined data and
per-round trajectory tables, all written inside a run directory.
"""
import csv
import json
import logging
import os

from arena.history import Seat
from arena.tournament import RunDirectory, aggregate, pair_matrix

logger = logging.getLogger("arena")

VEGA_LITE_SCHEMA = "https://vega.github.io/schema/vega-lite/v5.json"

GROUPINGS = {
    "agent": ("agent",),
    "agent_family": ("agent", "family"),
    "pair": ("pair",),
    "family": ("family",),
    "agent_variant": ("agent", "variant"),
    "agent_intervention": ("agent", "intervention"),
    "agent_prediction": ("agent", "prediction"),
}

HEATMAPS = {
    "defection": ("defection_rate", "Player 1 defection rate"),
    "score": ("score", "Player 1 normalized score"),
    "preferred": ("preferred_option_rate", "Player 1 preferred option rate"),
    "coordination": ("coordination_rate", "Coordination rate"),
}

TRAJECTORY_FIELDS = ("round", "action_p1", "action_p2", "payoff_p1", "payoff_p2", "prediction_p1", "prediction_p2")


def write_json(path: str, document):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(document, handle, indent=2, sort_keys=True)
        handle.write("\n")


def write_csv(path: str, rows: list, fieldnames):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def agent_order(transcripts) -> list:
    """Agent labels in order of first appearance."""
    labels = []
    for transcript in transcripts:
        for agent in (transcript.config.agent_p1, transcript.config.agent_p2):
            if agent.label not in labels:
                labels.append(agent.label)
    return labels


def family_bar_chart(rows) -> dict:
    """One bar per (engine, family) with its confidence interval; families best to worst."""
    totals = {}
    for row in rows:
        totals.setdefault(row.value("family"), []).append(row.mean_score)
    family_order = sorted(totals, key=lambda family: (-sum(totals[family]) / len(totals[family]), family))
    values = [
        {
            "engine": row.value("agent"),
            "family": row.value("family"),
            "mean": row.mean_score,
            "ci_low": max(0.0, row.mean_score - row.ci_half_width),
            "ci_high": min(1.0, row.mean_score + row.ci_half_width),
            "n": row.n,
        }
        for row in rows
    ]
    return {
        "$schema": VEGA_LITE_SCHEMA,
        "title": "Normalized performance by game family",
        "data": {"values": values},
        "encoding": {
            "x": {"field": "family", "type": "nominal", "sort": family_order},
            "xOffset": {"field": "engine", "type": "nominal"},
        },
        "layer": [
            {
                "mark": "bar",
                "encoding": {
                    "y": {"field": "mean", "type": "quantitative", "scale": {"domain": [0, 1]}},
                    "color": {"field": "engine", "type": "nominal"},
                },
            },
            {
                "mark": "errorbar",
                "encoding": {
                    "y": {"field": "ci_low", "type": "quantitative"},
                    "y2": {"field": "ci_high"},
                },
            },
        ],
    }


def heatmap(title: str, agents: list, matrix: list) -> dict:
    values = [
        {"player_1": row_agent, "player_2": col_agent, "value": matrix[i][j]}
        for i, row_agent in enumerate(agents)
        for j, col_agent in enumerate(agents)
    ]
    return {
        "$schema": VEGA_LITE_SCHEMA,
        "title": title,
        "usermeta": {"rows": len(agents), "columns": len(agents)},
        "data": {"values": values},
        "mark": "rect",
        "encoding": {
            "y": {"field": "player_1", "type": "nominal", "sort": agents},
            "x": {"field": "player_2", "type": "nominal", "sort": agents},
            "color": {"field": "value", "type": "quantitative", "scale": {"domain": [0, 1]}},
        },
    }


def trajectory_rows(transcript) -> list:
    game = transcript.config.game
    rows = []
    for played in transcript.rounds:
        row = {"round": played.number}
        for seat in Seat:
            suffix = "p{}".format(int(seat))
            labels = game.actions(int(seat))
            prediction = played.prediction(seat)
            row["action_" + suffix] = labels[played.action(seat)]
            row["payoff_" + suffix] = played.payoff(seat)
            # a seat predicts the other seat's move
            row["prediction_" + suffix] = "" if prediction is None else game.actions(int(seat.other))[prediction]
        rows.append(row)
    return rows


def format_round_table(transcript) -> str:
    rows = trajectory_rows(transcript)
    predicted = any(row["prediction_p1"] or row["prediction_p2"] for row in rows)
    fields = TRAJECTORY_FIELDS if predicted else TRAJECTORY_FIELDS[:5]
    widths = {name: max([len(name)] + [len(str(row[name])) for row in rows]) for name in fields}
    lines = ["  ".join(name.rjust(widths[name]) for name in fields)]
    for row in rows:
        lines.append("  ".join(str(row[name]).rjust(widths[name]) for name in fields))
    return "\n".join(lines)


def write_report(run_dir: RunDirectory, transcripts, *, agents=None, trajectory_games=(), failures=None) -> dict:
    """Write metrics, plots, trajectories and ``summary.json``; returns the summary."""
    run_dir.create()
    transcripts = sorted(transcripts, key=lambda transcript: transcript.match_id)
    agents = list(agents) if agents else agent_order(transcripts)
    written = []

    def record(*parts):
        written.append("/".join(parts))
        return run_dir.path(*parts)

    row_counts = {}
    for name, group_by in GROUPINGS.items():
        rows = aggregate(transcripts, group_by)
        row_counts[name] = len(rows)
        documents = [row.to_dict() for row in rows]
        fieldnames = list(group_by) + ["n", "invalid", "mean_score", "ci_half_width", "defection_rate",
                                       "coordination_rate", "preferred_option_rate", "single"]
        write_csv(record("metrics", "{}.csv".format(name)), documents, fieldnames)
        write_json(record("metrics", "{}.json".format(name)), documents)
        if name == "agent_family":
            write_json(record("plots", "family_bars.json"), family_bar_chart(rows))

    scopes = [("all", transcripts)]
    for game in trajectory_games:
        selected = [transcript for transcript in transcripts if transcript.config.game.name == game]
        if selected:
            scopes.append((game, selected))
    for scope, selected in scopes:
        for name, (metric, title) in HEATMAPS.items():
            matrix = pair_matrix(selected, agents, metric)
            document = heatmap("{} ({})".format(title, scope), agents, matrix)
            write_json(record("plots", "heatmap_{}_{}.json".format(name, scope)), document)

    wanted = set(trajectory_games)
    for transcript in transcripts:
        game = transcript.config.game.name
        if game in wanted:
            path = record("trajectories", "{}-{}.csv".format(game, transcript.match_id))
            write_csv(path, trajectory_rows(transcript), TRAJECTORY_FIELDS)

    invalid = sorted(transcript.match_id for transcript in transcripts if not transcript.valid)
    summary = {
        "run": os.path.basename(os.path.normpath(run_dir.root)),
        "agents": agents,
        "matches": len(transcripts),
        "valid": len(transcripts) - len(invalid),
        "invalid": len(invalid),
        "invalid_matches": invalid,
        "failures": dict(sorted((failures or {}).items())),
        "rows": row_counts,
        "files": sorted(written),
    }
    write_json(run_dir.path("summary.json"), summary)
    logger.info("Report written to %s", run_dir.root)
    return summary
