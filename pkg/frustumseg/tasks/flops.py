from prefect import Task
from prefect.utilities.tasks import defaults_from_attrs

from ..network.flops import FlopsReport, profile_flops


class CountFlops(Task):
    """
    Task for the FLOPs of a network profile on a reference volume geometry.

    Args:
        profile (str, optional): "compact", "narrow" (alias "paper") or "resnet10". Defaults to "narrow".
        domain (str, optional): "frustum" or "cartesian". Defaults to "frustum".
        mode (str, optional): "whole" or "roi". Defaults to "roi".
        timeout(int, optional): The amount of time (in seconds) to wait while running this task before
            a timeout occurs. Defaults to 3600.
    """

    def __init__(
        self,
        profile: str = "narrow",
        domain: str = "frustum",
        mode: str = "roi",
        timeout: int = 3600,
        *args,
        **kwargs,
    ):
        self.profile = profile
        self.domain = domain
        self.mode = mode

        super().__init__(name="count_flops", timeout=timeout, *args, **kwargs)

    @defaults_from_attrs("profile", "domain", "mode")
    def run(self, profile: str = None, domain: str = None, mode: str = None) -> FlopsReport:
        report = profile_flops(profile, domain, mode)
        self.logger.info(report.summary())
        return report
