from pathlib import Path

import pytest

from gridworm.classad import parse_ad

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

# Request ad exercising every language feature the selector relies on:
# cross-ad references, unit suffixes, list containment and a numeric rank.
REQUEST_AD_TEXT = """[
  Type="request";
  Owner="dangulo";
  RequiredDomains={"cs.uiuc.edu", "ucsd.edu"};
  requirements= "other.opSys=='LINUX' &
                other.minMemSize> (100G/other.CPUCount) &&
                Include(other.domains, RequiredDomains)
  ";
  Rank= other.minCPUSpeed * other.CPUCount / (other.maxCPULoad+1);
]"""

MATCHING_RESOURCE_TEXT = """[
  Type = "resource";
  name = "uiuc";
  opSys = "LINUX";
  minMemSize = 2G;
  CPUCount = 64;
  domains = {"cs.uiuc.edu", "ucsd.edu", "isi.edu"};
  minCPUSpeed = 500;
  maxCPULoad = 1;
]"""


@pytest.fixture
def request_ad():
    return parse_ad(REQUEST_AD_TEXT)


@pytest.fixture
def matching_resource():
    return parse_ad(MATCHING_RESOURCE_TEXT)
