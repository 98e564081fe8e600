from frustumseg.tasks import CountFlops


def test_count_flops_defaults():
    report = CountFlops().run()
    assert (report.profile, report.domain, report.mode) == ("narrow", "frustum", "roi")
    assert report.total_flops == 1_944_521_760


def test_count_flops_overrides():
    report = CountFlops().run(mode="whole")
    assert report.total_flops == 5_146_260_480
