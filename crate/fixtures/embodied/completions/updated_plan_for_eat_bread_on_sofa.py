def updated_plan_for_eat_bread_on_sofa():
    # Step 3: Ensure near the sofa
    assert('close' to 'sofa')
        else: find('sofa')
    sit('sofa')
    # Step 4: Eat the bread
    eat('bread')
