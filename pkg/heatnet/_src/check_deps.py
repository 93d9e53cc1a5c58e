def check_bench_deps():
    try:
        import pandas
    except ImportError:
        raise ImportError(
            "To export benchmark summaries please reinstall heatnet with the `bench` extra flag by typing `pip install heatnet[bench]`."
        )
