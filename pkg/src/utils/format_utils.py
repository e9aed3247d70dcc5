"""
Plain-text summaries of labeling metrics, IDS audits and latent sweeps.
Used for the audit text report and for log-friendly output.
"""
from typing import List, Optional, Sequence

RULE = '─' * 70


def format_percent(value: Optional[float]) -> str:
    if value is None:
        return 'n/a'
    return f'{value * 100:.2f}%'


def format_intervals(intervals: Sequence[Sequence[float]]) -> str:
    return ', '.join(f'[{lo:.4g}, {hi:.4g}]' for lo, hi in intervals)


def _section(title: str) -> List[str]:
    return ['', RULE, f'  {title}', RULE]


def _id_block(title: str, flow_ids: Sequence[str], limit: int) -> List[str]:
    lines = [f'  ▸ {title} ({len(flow_ids)})']
    for flow_id in flow_ids[:limit]:
        lines.append(f'    • {flow_id}')
    if len(flow_ids) > limit:
        lines.append(f'    • ... {len(flow_ids) - limit} more')
    return lines


def format_metrics_text(report, title: str = 'Labeling metrics') -> str:
    """
    Format a MetricsReport for the terminal or a text file.

    Args:
        report: MetricsReport
        title: Section heading

    Returns:
        Multi-line text
    """
    lines = _section(title)
    lines.append(f'    Flows:               {report.total}')
    lines.append(f'    TP / FP / TN / FN:   {report.tp} / {report.fp} / {report.tn} / {report.fn}')
    lines.append(f'    Accuracy:            {format_percent(report.accuracy)}')
    lines.append(f'    Precision:           {format_percent(report.precision)}')
    lines.append(f'    Recall:              {format_percent(report.recall)}')
    lines.append(f'    False positive rate: {format_percent(report.false_positive_rate)}')
    lines.append(f'    Benign accuracy:     {format_percent(report.benign_accuracy)}')
    for tag, value in sorted(report.benign_accuracy_by_tag.items()):
        lines.append(f'      {tag:<18} {format_percent(value)}')
    return '\n'.join(lines).strip('\n')


def format_audit_text(report, limit: int = 20) -> str:
    """Human-readable IDS audit summary listing disagreements for triage."""
    lines = _section('IDS audit against full-flow labels')
    lines.append(f'    Joined flows:        {report.joined}')
    lines.append(f'    Agreement:           {format_percent(report.agreement)}')
    lines.append(f'    IDS precision:       {format_percent(report.ids_precision)}')
    lines.append(f'    IDS recall:          {format_percent(report.ids_recall)}')
    lines.append(f'    IDS false pos. rate: {format_percent(report.ids_false_positive_rate)}')

    lines.extend(_section('Confusion (rows: IDS verdict, columns: reference label)'))
    lines.append(f'    {"":<12}{"Malicious":>12}{"Benign":>12}')
    lines.append(f'    {"Malicious":<12}{report.true_positives:>12}{report.false_positives:>12}')
    lines.append(f'    {"Benign":<12}{report.false_negatives:>12}{report.true_negatives:>12}')

    lines.extend(_section('Disagreements'))
    lines.extend(_id_block('IDS malicious, label benign', report.false_positive_ids, limit))
    lines.extend(_id_block('IDS benign, label malicious', report.false_negative_ids, limit))

    if report.unmatched_ids or report.unmatched_labels:
        lines.extend(_section('Unmatched flow ids'))
        lines.extend(_id_block('In IDS log only', report.unmatched_ids, limit))
        lines.extend(_id_block('In labels only', report.unmatched_labels, limit))
    return '\n'.join(lines).strip('\n') + '\n'


def format_sweep_text(report) -> str:
    lines = _section(f'Latent dimension sweep (rolling window {report.rolling_window})')
    lines.append(f'    {"dim":>5}{"mean":>14}{"min":>14}{"max":>14}{"std":>14}{"rolling":>14}')
    for s in report.summaries:
        marker = '  <' if s.latent_dim == report.recommended_dim else ''
        lines.append(f'    {s.latent_dim:>5}{s.mean:>14.6g}{s.min:>14.6g}{s.max:>14.6g}'
                     f'{s.std:>14.6g}{s.rolling_mean:>14.6g}{marker}')
    lines.append('')
    lines.append(f'    Grand mean over all dims: {report.grand_mean:.6g}')
    lines.append(f'    Recommended latent dim:   {report.recommended_dim}')
    for warning in report.warnings:
        lines.append(f'    Warning: {warning}')
    return '\n'.join(lines).strip('\n')
