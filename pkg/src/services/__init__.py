"""
Services package: training, labeling, sweep and audit orchestration.
"""
