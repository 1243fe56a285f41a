# Evaluation studies
