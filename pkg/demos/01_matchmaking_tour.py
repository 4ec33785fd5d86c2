"""
A tour of the matchmaking language
==================================

Requests and resources both describe themselves as classified ads: bags of
named attributes whose values are expressions.  Matching is symmetric -- a
request and a resource match when each side's `requirements` expression is
true when evaluated against the other -- and among the matches the request's
`Rank` expression picks a winner.
"""

from gridworm.classad import check_requirements, compute_rank, parse_ad

# A request: the job wants a LINUX clique with enough memory per CPU, and
# insists on two specific administrative domains.  Rank prefers fast, wide,
# lightly loaded cliques.
request = parse_ad("""[
  Type = "request";
  Owner = "dangulo";
  RequiredDomains = {"cs.uiuc.edu", "ucsd.edu"};
  requirements = "other.opSys == 'LINUX' &&
                  other.minMemSize > (100G / other.CPUCount) &&
                  Include(other.domains, RequiredDomains)";
  Rank = other.minCPUSpeed * other.CPUCount / (other.maxCPULoad + 1);
]""")

# Three candidate cliques.  Note 2G is 2*2^30 bytes: unit suffixes are
# powers of two.
uiuc = parse_ad("""[
  Type = "resource"; name = "uiuc";
  opSys = "LINUX"; minMemSize = 2G; CPUCount = 64;
  domains = {"cs.uiuc.edu", "ucsd.edu", "isi.edu"};
  minCPUSpeed = 500; maxCPULoad = 1;
]""")

irix_box = parse_ad("""[
  Type = "resource"; name = "sgi-lab";
  opSys = "IRIX"; minMemSize = 8G; CPUCount = 16;
  domains = {"cs.uiuc.edu", "ucsd.edu"};
  minCPUSpeed = 900; maxCPULoad = 0;
]""")

# This one never says what operating system it runs.  The comparison with a
# missing attribute is neither true nor false -- it is Undefined -- and an
# Undefined requirement is conservatively treated as a non-match.
mystery = parse_ad("""[
  Type = "resource"; name = "mystery";
  minMemSize = 4G; CPUCount = 128;
  domains = {"cs.uiuc.edu", "ucsd.edu"};
  minCPUSpeed = 700; maxCPULoad = 0;
]""")

for resource in (uiuc, irix_box, mystery):
    name = resource.get("name").value
    if check_requirements(request, resource):
        # rank = 500 * 64 / (1 + 1) = 16000 for uiuc
        print(f"{name:10s} matches, rank {compute_rank(request, resource):g}")
    else:
        print(f"{name:10s} does not match")

# The same machinery drives the selector: derive an ad per clique, keep the
# matches, take the argmax by rank (ties break to the smallest name).
from gridworm.resources import Clique, Directory, MachineSpec
from gridworm.selector import SelectionRequest, select

machines = tuple(
    MachineSpec(
        name=f"n{i}", domain=d, op_sys="LINUX", cpu_count=32,
        cpu_speed_mhz=500.0, mem_bytes=4 * 2**30, base_load=0.0,
        iter_rate_factor=10.0,
    )
    for i, d in enumerate(["cs.uiuc.edu", "ucsd.edu"])
)
clique = Clique("uiuc-pool", machines, link_bandwidth_mbps=100, wan_bandwidth_mbps=10)

directory = Directory().register(clique, ttl_seconds=600, now=0.0)
response = select(SelectionRequest(request, "demo"), directory, now=0.0)
print(f"\nselector picks {response.clique_name} at rank {response.rank:g}")
