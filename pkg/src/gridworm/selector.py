"""Resource Selector: synchronous best-match queries over live cliques.

A request ad is matched against the derived ad of every live clique; the
highest-ranked clique that passes requirements wins, ties going to the
lexicographically smallest name.  Selection is a pure function of the
request and a directory snapshot.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Union

from .classad import ClassAd, check_requirements, compute_rank
from .resources import Directory, derive_clique_ad


@dataclass(frozen=True)
class SelectionRequest:
    request_ad: ClassAd
    request_id: str
    exclude_clique: Optional[str] = None
    # candidates must strictly beat this rank (degraded rank of the clique
    # currently in use); None means no floor
    min_rank: Optional[float] = None


@dataclass(frozen=True)
class Success:
    clique_name: str
    clique_ad: ClassAd
    rank: float


@dataclass(frozen=True)
class Failure:
    reason: str


SelectionResponse = Union[Success, Failure]


def select(request: SelectionRequest, directory: Directory, now: float) -> SelectionResponse:
    if "requirements" not in request.request_ad:
        return Failure("request ad has no requirements attribute")
    best: Optional[Success] = None
    for clique in directory.live(now):
        if clique.name == request.exclude_clique:
            continue
        ad = derive_clique_ad(clique, now)
        if not check_requirements(request.request_ad, ad):
            continue
        rank = compute_rank(request.request_ad, ad)
        if request.min_rank is not None and rank <= request.min_rank:
            continue
        # directory.live yields names in sorted order, so strict > keeps the
        # lexicographically smallest name on ties
        if best is None or rank > best.rank:
            best = Success(clique.name, ad, rank)
    if best is None:
        return Failure("no matching resources")
    return best


def exclude_current(
    request: SelectionRequest,
    current_clique: str,
    directory: Optional[Directory] = None,
    now: float = 0.0,
) -> SelectionRequest:
    """Rule out the clique currently in use and require strictly better rank.

    The floor is the current clique's rank evaluated with its live (possibly
    degraded) load.  If the clique is absent from the directory the request
    is unchanged in effect.
    """
    min_rank: Optional[float] = None
    if directory is not None:
        clique = directory.get(current_clique, now)
        if clique is not None:
            ad = derive_clique_ad(clique, now)
            if check_requirements(request.request_ad, ad):
                min_rank = compute_rank(request.request_ad, ad)
    return dataclasses.replace(
        request, exclude_clique=current_clique, min_rank=min_rank
    )
