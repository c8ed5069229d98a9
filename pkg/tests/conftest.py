def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.line(mod.RESULTS[cid]))
