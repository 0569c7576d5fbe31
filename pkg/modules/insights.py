import logging

import pandas as pd

from modules.analysis import Analysis
from modules.events import EventKind

logger = logging.getLogger(__name__)


class Insights:
    """
    A class to turn simulation results into readable reports
    """

    @staticmethod
    def run_insights(result):
        """
        Generate insights about one seeded run

        Parameters:
        -----------
        result : SimResult
            A finished (or replayed) run

        Returns:
        --------
        list
            List of insight strings
        """
        insights = []
        verdict = result.verdict
        detail = verdict.detail
        metrics = result.metrics

        if verdict.good:
            insights.append("The run reached a good ending: stored records are stable and honest cost stopped.")
        else:
            failed = [name for name, ok in (("stable", verdict.stable), ("cheap", verdict.cheap)) if not ok]
            insights.append(f"The run did not reach a good ending (not {' and not '.join(failed)}).")

        insights.append(
            f"{detail.records_checked} reference records were checked at round {detail.reference_round} "
            f"(height {detail.reference_height}); {len(detail.mismatched)} resolved to different bytes "
            f"and {len(detail.unresolved)} could not be resolved."
        )
        if detail.archive_disagreements:
            insights.append(
                f"An archive-aware querier and a naive querier disagree on {len(detail.archive_disagreements)} records."
            )
        insights.append(f"Honest cost after the grace period was {detail.cost_after}.")

        if not metrics.empty:
            shares = Analysis.mode_share(metrics)
            dishonest = shares.get("dishonest", 0.0) * 100
            insights.append(f"The system spent {dishonest:.1f}% of sampled rounds in dishonest mode.")
            thin = metrics["thin"].mean() * 100
            insights.append(f"The community was thin in {thin:.1f}% of sampled rounds.")
            production_only = metrics[(metrics["thin"] == 0) & (metrics["production_thin"] == 1)]
            if not production_only.empty:
                insights.append(
                    f"Active production was thin despite a thick membership in {len(production_only)} sampled rounds."
                )

        replay = result.replay
        if replay.first_lumpy_round is not None:
            insights.append(f"The community first became lumpy at round {replay.first_lumpy_round}.")
        if replay.fork_published_rounds:
            insights.append(
                f"A private fork was published {len(replay.fork_published_rounds)} times, "
                f"first at round {replay.fork_published_rounds[0]}."
            )
        if replay.safety_violations:
            insights.append(f"{replay.safety_violations} conflicting finality certificates were observed.")
        splits = result.log.of_kind(EventKind.PERMANENT_SPLIT)
        if splits:
            insights.append(f"Frozen prefixes split permanently at round {splits[0].round}.")
        return insights

    @staticmethod
    def batch_insights(seed_df, summary):
        """
        Generate insights across a seed batch

        Parameters:
        -----------
        seed_df : pandas.DataFrame
            Output of ``Analysis.seed_table``
        summary : dict
            Output of ``Analysis.batch_summary``

        Returns:
        --------
        list
            List of insight strings
        """
        if not summary:
            return []
        insights = [
            f"{summary['seeds']} seeds were run; {summary['good_ending_rate'] * 100:.1f}% reached a good ending.",
            f"Stable on {summary['stable_rate'] * 100:.1f}% of seeds, cheap on {summary['cheap_rate'] * 100:.1f}%.",
            f"A rewrite was published on {summary['rewrite_success_frequency'] * 100:.1f}% of seeds.",
        ]
        if summary["safety_violation_seeds"]:
            insights.append(f"{summary['safety_violation_seeds']} seeds saw conflicting finality certificates.")
        if summary["lumpy_seeds"]:
            insights.append(
                f"The community became lumpy on {summary['lumpy_seeds']} seeds, first at round "
                f"{summary['first_lumpy_round_min']:.0f} (median {summary['first_lumpy_round_median']:.1f})."
            )
        breakdown = Analysis.outcome_breakdown(seed_df)
        for _, row in breakdown.iterrows():
            insights.append(f"- stable={bool(row['stable'])}, cheap={bool(row['cheap'])}: {row['seeds']} seeds")
        return insights

    @staticmethod
    def format_insights(insights_list):
        """
        Format a list of insights as markdown
        """
        if not insights_list:
            return "No insights available."

        formatted_text = "## Key Insights\n\n"
        number = 0
        for insight in insights_list:
            if insight.startswith("-"):
                formatted_text += f"{insight}\n"
            else:
                number += 1
                formatted_text += f"{number}. {insight}\n\n"
        return formatted_text

    @staticmethod
    def run_report(result):
        scenario = result.scenario
        verdict = result.verdict
        lines = [
            f"# {scenario.name} (seed {result.seed})",
            "",
            f"- stable: {str(verdict.stable).lower()}",
            f"- cheap: {str(verdict.cheap).lower()}",
            f"- event log digest: {result.log_digest.hex()}",
            "",
            Insights.format_insights(Insights.run_insights(result)),
        ]
        return "\n".join(lines)

    @staticmethod
    def batch_report(scenario_name, seed_df, summary):
        lines = [f"# {scenario_name} batch summary", ""]
        if not summary:
            lines.append("No seeds were run.")
            return "\n".join(lines) + "\n"
        table = pd.DataFrame([summary]).T.reset_index()
        table.columns = ["metric", "value"]
        for _, row in table.iterrows():
            lines.append(f"- {row['metric']}: {row['value']}")
        lines.append("")
        lines.append(Insights.format_insights(Insights.batch_insights(seed_df, summary)))
        return "\n".join(lines)
