// Umbrella include for the whole library.
#pragma once

#include <nurdstab/common.hpp>
#include <nurdstab/correlation.hpp>
#include <nurdstab/frame.hpp>
#include <nurdstab/fusion.hpp>
#include <nurdstab/graph_search.hpp>
#include <nurdstab/io.hpp>
#include <nurdstab/metrics.hpp>
#include <nurdstab/net.hpp>
#include <nurdstab/sheath.hpp>
#include <nurdstab/synth.hpp>
#include <nurdstab/train.hpp>
