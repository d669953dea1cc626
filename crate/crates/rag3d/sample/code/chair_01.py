import bpy


def add_box(name, size, location):
    bpy.ops.mesh.primitive_cube_add(size=1.0, location=location)
    obj = bpy.context.active_object
    obj.name = name
    obj.scale = (size[0] / 2, size[1] / 2, size[2] / 2)
    return obj


wood = bpy.data.materials.new(name="Oak")
wood.diffuse_color = (0.55, 0.36, 0.2, 1.0)

seat_height = 0.45
leg = 0.04
parts = [add_box("Seat", (0.45, 0.45, 0.04), (0, 0, seat_height))]
for i, (x, y) in enumerate([(-0.2, -0.2), (0.2, -0.2), (-0.2, 0.2), (0.2, 0.2)]):
    parts.append(add_box(f"Leg_{i}", (leg, leg, seat_height), (x, y, seat_height / 2)))
parts.append(add_box("Backrest", (0.45, 0.03, 0.45), (0, 0.21, seat_height + 0.245)))

for obj in parts:
    obj.data.materials.append(wood)
