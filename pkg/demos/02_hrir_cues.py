"""Synthetic HRIRs for the 24-speaker dome and the cues they carry."""
from binloc.spatial import HeadModel, hrir_itd_ild, speaker_positions, synth_hrir_set
from binloc.spatial import to_spherical, woodworth_itd

sr = 44100
head = HeadModel()
array = speaker_positions()            # levels of 9/9/5/1 speakers at 1.8 m
hrirs = synth_hrir_set(array, head, sr)

print(" spk   az    el   ITD(us)  model(us)  ILD(dB)")
for k, (p, h) in enumerate(zip(array.positions, hrirs), start=1):
    s = to_spherical(p)
    itd, ild = hrir_itd_ild(h)
    print(f"{k:4d} {s.azimuth:5.0f} {s.elevation:5.0f} {itd * 1e6:9.1f} "
          f"{woodworth_itd(p, head) * 1e6:9.1f} {ild:8.2f}")

# azimuth runs clockwise, so 90 deg is the right ear: negative ITD and ILD
# (left-ear lead and left-ear level are the positive directions)
