"""Concurrent download of NVD JSON feeds."""

import asyncio
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import aiohttp

from .errors import PartialDownload, UnreadableSource
from .storage import atomic_write_bytes


logger = logging.getLogger(__name__)

DEFAULT_FEED_URL = "https://nvd.nist.gov/feeds/json/cve/1.1/nvdcve-1.1-{year}.json.gz"


class FeedFetcher:
    """Downloads feed files with bounded concurrency and simple retry."""

    def __init__(
        self,
        max_concurrent: int = 3,
        timeout: int = 60,
        retries: int = 3,
        backoff: float = 2.0,
    ):
        self.max_concurrent = max_concurrent
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    async def fetch_bytes(
        self,
        url: str,
        session: Optional[aiohttp.ClientSession] = None,
        semaphore: Optional[asyncio.Semaphore] = None,
    ) -> bytes:
        """Fetch one URL, retrying transient failures."""
        if session is None:
            async with aiohttp.ClientSession() as own_session:
                return await self.fetch_bytes(url, own_session, semaphore)

        semaphore = semaphore or asyncio.Semaphore(self.max_concurrent)
        last_error: Optional[Exception] = None
        for attempt in range(1, self.retries + 1):
            # The slot is held per attempt, not across the backoff sleep
            async with semaphore:
                try:
                    logger.info("fetching %s (attempt %d)", url, attempt)
                    async with session.get(
                        url, timeout=aiohttp.ClientTimeout(total=self.timeout)
                    ) as response:
                        response.raise_for_status()
                        return await response.read()
                except aiohttp.ClientResponseError as e:
                    last_error = e
                    # Client errors will not go away on retry
                    if 400 <= e.status < 500:
                        break
                except (aiohttp.ClientError, asyncio.TimeoutError) as e:
                    last_error = e
            if attempt < self.retries:
                await asyncio.sleep(self.backoff * attempt)
        reason = f"{type(last_error).__name__}: {last_error}" if last_error else "unknown error"
        raise UnreadableSource(url, reason)

    async def fetch_years(
        self,
        years: Sequence[int],
        out_dir: Union[str, Path],
        url_template: str = DEFAULT_FEED_URL,
    ) -> Dict[int, Path]:
        """Download one feed per year into out_dir, concurrently.

        Feeds that arrive are saved even when others fail; PartialDownload
        then carries the saved paths.
        """
        out_dir = Path(out_dir)
        semaphore = asyncio.Semaphore(self.max_concurrent)
        async with aiohttp.ClientSession() as session:
            urls = [url_template.format(year=year) for year in years]
            results = await asyncio.gather(
                *(self.fetch_bytes(url, session, semaphore) for url in urls),
                return_exceptions=True,
            )

        paths: Dict[int, Path] = {}
        failed: List[str] = []
        errors: List[str] = []
        for year, url, result in zip(years, urls, results):
            if isinstance(result, BaseException):
                failed.append(url)
                errors.append(str(result))
                continue
            path = out_dir / url.rsplit("/", 1)[-1]
            atomic_write_bytes(path, result)
            paths[year] = path
            logger.info("saved %s (%d bytes)", path, len(result))
        if errors:
            raise PartialDownload(failed, "; ".join(errors), paths)
        return paths


def fetch_url(url: str, timeout: int = 60) -> bytes:
    """Blocking helper for single-URL loads."""
    return asyncio.run(FeedFetcher(max_concurrent=1, timeout=timeout).fetch_bytes(url))
