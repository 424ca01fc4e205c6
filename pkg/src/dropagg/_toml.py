try:
    from tomllib import loads, TOMLDecodeError  # noqa: F401
except ModuleNotFoundError:  # Python < 3.11
    from tomli import loads, TOMLDecodeError  # noqa: F401
