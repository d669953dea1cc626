import bpy

painted = bpy.data.materials.new(name="GreenPaint")
painted.diffuse_color = (0.1, 0.35, 0.15, 1.0)
iron = bpy.data.materials.new(name="CastIron")
iron.diffuse_color = (0.05, 0.05, 0.05, 1.0)

length = 1.8
for i in range(4):
    bpy.ops.mesh.primitive_cube_add(size=1.0, location=(0, -0.18 + i * 0.12, 0.45))
    slat = bpy.context.active_object
    slat.name = f"SeatSlat_{i}"
    slat.scale = (length / 2, 0.05, 0.015)
    slat.data.materials.append(painted)

for i in range(3):
    bpy.ops.mesh.primitive_cube_add(size=1.0, location=(0, 0.28, 0.6 + i * 0.12))
    slat = bpy.context.active_object
    slat.name = f"BackSlat_{i}"
    slat.scale = (length / 2, 0.015, 0.045)
    slat.data.materials.append(painted)

for side in (-1, 1):
    bpy.ops.mesh.primitive_cube_add(size=1.0, location=(side * (length / 2 - 0.1), 0.02, 0.4))
    frame = bpy.context.active_object
    frame.name = f"Frame_{'L' if side < 0 else 'R'}"
    frame.scale = (0.03, 0.28, 0.4)
    frame.data.materials.append(iron)
