#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "predft/data/recording.hpp"
#include "predft/error.hpp"

namespace predft::data {

enum class SplitMode { WithinSubject, CrossSubject };
enum class Part { Train, Valid, Test };

inline const char* part_name(Part p) {
  switch (p) {
    case Part::Train: return "train";
    case Part::Valid: return "valid";
    case Part::Test: return "test";
  }
  return "?";
}

struct Assignment {
  std::string subject;
  std::string story;
  Part part = Part::Train;
};

struct SplitSpec {
  SplitMode mode = SplitMode::WithinSubject;
  std::vector<Assignment> assignments;
};

struct Violation {
  std::string kind;  ///< "subject-overlap", "story-overlap" or "multiple-subjects"
  std::string subject;
  std::string story;
  Part part = Part::Test;

  friend bool operator==(const Violation&, const Violation&) = default;
};

template <typename RecordingT>
struct SplitsOf {
  std::vector<RecordingT> train, valid, test;
  std::vector<Violation> audit;
};
using Splits = SplitsOf<Recording>;

/// Checks the leakage rules over an assignment list:
///   held-out (valid/test) stories never appear in training;
///   cross-subject: held-out subjects never appear in training;
///   within-subject: exactly one subject overall.
inline std::vector<Violation> audit_assignments(const SplitSpec& spec) {
  std::set<std::string> train_subjects, train_stories, all_subjects;
  for (const auto& a : spec.assignments) {
    all_subjects.insert(a.subject);
    if (a.part == Part::Train) {
      train_subjects.insert(a.subject);
      train_stories.insert(a.story);
    }
  }
  std::vector<Violation> out;
  for (const auto& a : spec.assignments) {
    if (a.part == Part::Train) continue;
    if (spec.mode == SplitMode::CrossSubject && train_subjects.count(a.subject)) {
      out.push_back({"subject-overlap", a.subject, a.story, a.part});
    }
    if (train_stories.count(a.story)) out.push_back({"story-overlap", a.subject, a.story, a.part});
  }
  if (spec.mode == SplitMode::WithinSubject && all_subjects.size() > 1) {
    out.push_back({"multiple-subjects", *std::next(all_subjects.begin()), "", Part::Train});
  }
  return out;
}

/// Default assignment: stories sorted by name, the last held out for test
/// and the one before it for validation. Cross-subject mode additionally
/// holds out the last subject for test and, when there are three or more,
/// the second-to-last for validation.
template <typename RecordingT>
SplitSpec default_split(const std::vector<RecordingT>& recordings, SplitMode mode) {
  std::set<std::string> subjects, stories;
  for (const auto& r : recordings) {
    subjects.insert(r.subject);
    stories.insert(r.story);
  }
  const std::vector<std::string> subj(subjects.begin(), subjects.end());
  const std::vector<std::string> stor(stories.begin(), stories.end());
  if (stor.size() < 3) throw ValidationError("splitting needs at least three stories");
  SplitSpec spec;
  spec.mode = mode;
  const std::string& test_story = stor.back();
  const std::string& valid_story = stor[stor.size() - 2];
  if (mode == SplitMode::WithinSubject) {
    for (const auto& r : recordings) {
      if (r.subject != subj.front()) continue;
      const Part p = r.story == test_story    ? Part::Test
                     : r.story == valid_story ? Part::Valid
                                              : Part::Train;
      spec.assignments.push_back({r.subject, r.story, p});
    }
    return spec;
  }
  if (subj.size() < 2) throw ValidationError("cross-subject splitting needs at least two subjects");
  const std::string& test_subject = subj.back();
  const std::string& valid_subject = subj.size() >= 3 ? subj[subj.size() - 2] : subj.back();
  for (const auto& r : recordings) {
    const bool held_subject = r.subject == test_subject || r.subject == valid_subject;
    if (r.story == test_story && r.subject == test_subject) {
      spec.assignments.push_back({r.subject, r.story, Part::Test});
    } else if (r.story == valid_story && r.subject == valid_subject) {
      spec.assignments.push_back({r.subject, r.story, Part::Valid});
    } else if (!held_subject && r.story != test_story && r.story != valid_story) {
      spec.assignments.push_back({r.subject, r.story, Part::Train});
    }
  }
  return spec;
}

/// Partitions recordings by an explicit assignment and audits the result.
/// Recordings without an assignment are left out.
template <typename RecordingT>
SplitsOf<RecordingT> make_splits(const std::vector<RecordingT>& recordings, const SplitSpec& spec) {
  std::set<std::string> subjects, stories;
  for (const auto& r : recordings) {
    subjects.insert(r.subject);
    stories.insert(r.story);
  }
  if (spec.mode == SplitMode::CrossSubject && subjects.size() < 2) {
    throw ValidationError("cross-subject split needs at least two subjects");
  }
  if (stories.size() < 2) throw ValidationError("split needs at least two stories");
  SplitsOf<RecordingT> out;
  for (const auto& a : spec.assignments) {
    auto it = std::find_if(recordings.begin(), recordings.end(), [&](const auto& r) {
      return r.subject == a.subject && r.story == a.story;
    });
    if (it == recordings.end()) {
      throw ValidationError("split assigns unknown recording " + a.subject + "/" + a.story);
    }
    (a.part == Part::Train ? out.train : a.part == Part::Valid ? out.valid : out.test).push_back(*it);
  }
  out.audit = audit_assignments(spec);
  return out;
}

}  // namespace predft::data
