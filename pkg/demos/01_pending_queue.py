"""Which action runs when?  A walk through one queue window.

Five decisions a_0..a_4 were made with delays 5, 4, 4, 4, 3 and the maximum
delay is 5.  At t = 5 the agent draws a new delay z_5 and asks which of its
earlier decisions will execute at t = 5, 6, ... before the new one can.
"""
from sedmdp import QueueState, decision_times, effective_decision_time, resolve_pending_queue

M = 5
window = QueueState.initial(default_queue=[0] * M, max_delay=M)
for t, z in enumerate((5, 4, 4, 4, 3)):
    window = window.push(t, z)  # action id == decision time, so the output reads as indices

print("earliest execution of a_0..a_4:", [t + z for t, z in enumerate((5, 4, 4, 4, 3))])
for z5 in range(M, -1, -1):
    pending = resolve_pending_queue(5, z5, window)
    tau = effective_decision_time(5, window, z5)
    print(f"z_5 = {z5}: pending {['a_%d' % a for a in pending]!s:34s} executes a_{tau} now")

# a_3 never runs: a_4 was decided later yet becomes executable at the same time
print("\neffective decision times for t = 0..9 with z_5..z_9 = 5:",
      decision_times([5, 4, 4, 4, 3, 5, 5, 5, 5, 5], M))
print("negative entries point into the default queue (slot -M + i runs abar[i])")
